import pandas as pd
from typing import Any, List, Optional, Sequence


def table_to_dataframe(
    column_headers: Sequence[str], rows: Sequence[Sequence[Any]]
) -> pd.DataFrame:
    """
    >>> table_to_dataframe(column_headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> pd.DataFrame

    Creates a DataFrame from report rows and column headers.

    Parameters
    ----------
    column_headers : Sequence[str]
        List of column headers.
    rows : Sequence[Sequence[Any]]
        Report rows. Each row holds one value per header; `None` marks a missing value.

    Returns
    -------
    * `pd.DataFrame` :
        A DataFrame constructed from the given rows and column headers.

    Raises
    ------
    * `ValueError` :
        If the length of any row is not equal to the length of column headers.

    Examples
    --------
    >>> df = table_to_dataframe(["solver", "cost"], [["mixed", 1.71], ["A100-only", 3.67]])
    >>> print(df)
          solver  cost
    0      mixed  1.71
    1  A100-only  3.67
    """
    for row in rows:
        if len(row) != len(column_headers):
            raise ValueError("Each row must have the same length as the column headers")

    return pd.DataFrame([list(row) for row in rows], columns=list(column_headers))


def print_table(
    column_headers: Sequence[str],
    rows: Sequence[Sequence[Any]],
    title: Optional[str] = None,
    missing: str = "-",
) -> str:
    """
    >>> print_table(column_headers, rows, title=None, missing="-") -> str

    Creates a fixed-width text table from given rows and column headers, the format the
    command line prints.

    Examples
    --------
    >>> print(print_table(["gpu", "count"], [["L4", 1], ["A10G", None]]))
     gpu count
      L4     1
    A10G     -
    """
    df = table_to_dataframe(column_headers, rows)
    lines: List[str] = [] if title is None else [title]
    lines.append(df.to_string(index=False, na_rep=missing))
    return "\n".join(lines)
