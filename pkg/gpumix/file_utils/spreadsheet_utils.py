import io
import json
from typing import Union

import pandas as pd

from gpumix.file_utils.general_utils import PathLike, path_to_filetype


def file_to_dataframe(file: Union[PathLike, io.BytesIO]) -> pd.DataFrame:
    """
    >>> file_to_dataframe(file: Union[PathLike, io.BytesIO]) -> pd.DataFrame

    Reads a spreadsheet (a request trace, usually) into a pandas DataFrame.

    Parameters
    ----------
    file : Union[PathLike, io.BytesIO]
        Path to a CSV or Excel file, or an in-memory file object.

    Returns
    -------
    * `pd.DataFrame` :
        A DataFrame created from the file data.

    Raises
    ------
    * `pd.errors.ParserError` :
        If the file is neither CSV nor Excel.

    Examples
    --------
    >>> df = file_to_dataframe("traces/arena.csv")
    >>> print(df)
       input_tokens  output_tokens
    0            83            312
    1            17             45
    """
    excel_first = not isinstance(file, io.IOBase) and path_to_filetype(file) == "xlsx"

    readers = [
        lambda f: pd.read_csv(f),
        lambda f: pd.read_excel(f, engine="openpyxl"),
    ]
    if excel_first:
        readers.reverse()

    # try the reader matching the extension first, then the other one
    last_error = None
    for reader in readers:
        try:
            if isinstance(file, io.IOBase):
                file.seek(0)
            return reader(file)
        except Exception as e:
            last_error = e

    raise pd.errors.ParserError("File Type Not Supported") from last_error


def print_dataframe(df: pd.DataFrame, fmt: str = "table", float_digits: int = 4) -> str:
    """
    >>> print_dataframe(df: pd.DataFrame, fmt: str = "table", float_digits: int = 4) -> str

    Renders a DataFrame as a plain-text table, CSV text or a JSON array of records.

    Parameters
    ----------
    df : pd.DataFrame
        The DataFrame to render.
    fmt : str, optional
        One of `"table"`, `"csv"` or `"json"`. Defaults to `"table"`.
    float_digits : int, optional
        Decimals shown for floats in the `"table"` format. Defaults to `4`.

    Returns
    -------
    * `str` :
        The rendered text.

    Raises
    ------
    * `ValueError` :
        If `fmt` is not a supported format.
    """
    fmt = fmt.lower()

    if fmt == "table":
        return df.to_string(index=False, float_format=lambda v: f"{v:.{float_digits}f}")
    if fmt == "csv":
        return df.to_csv(index=False)
    if fmt == "json":
        records = json.loads(df.to_json(orient="records", double_precision=15))
        return json.dumps(records, indent=2)

    raise ValueError(f"Unsupported output format: {fmt}")
