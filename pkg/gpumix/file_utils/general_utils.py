import json
import os
from typing import Any, Dict, Optional, Union

SCHEMA_VERSION = 1

PathLike = Union[str, "os.PathLike[str]"]


def path_to_filetype(path: PathLike) -> str:
    """
    >>> path_to_filetype(path: PathLike) -> str

    Extracts the file type from a file path's extension.

    Parameters
    ----------
    path : PathLike
        Path to a trace, histogram, profile or registry file.

    Returns
    -------
    * `str` :
        The lower-case file type (e.g., 'csv', 'json'). Every Excel flavour is reported as 'xlsx'.

    Examples
    --------
    >>> path_to_filetype("traces/arena.CSV")
    'csv'
    >>> path_to_filetype("traces/arena.xlsm")
    'xlsx'
    """
    file_type = os.path.splitext(os.fspath(path))[1].lower().lstrip(".")

    if file_type in {"xls", "xlsm", "xlsb", "xlsx", "excel"}:
        file_type = "xlsx"

    return file_type


def read_json(path: PathLike, kind: Optional[str] = None) -> Dict[str, Any]:
    """
    >>> read_json(path: PathLike, kind: Optional[str] = None) -> Dict[str, Any]

    Loads a gpumix JSON document and checks its `schema_version` (and `kind`, when given).

    Parameters
    ----------
    path : PathLike
        The JSON file to read.
    kind : str, optional
        Expected value of the document's `kind` field. Documents without a `kind` field are accepted.

    Returns
    -------
    * `Dict[str, Any]` :
        The decoded document.

    Raises
    ------
    * `ValueError` :
        If the file is not a JSON object, carries an unsupported `schema_version` or the wrong `kind`.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"{os.fspath(path)}: not valid JSON ({e})") from e

    if not isinstance(doc, dict):
        raise ValueError(f"{os.fspath(path)}: expected a JSON object")

    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(
            f"{os.fspath(path)}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )

    if kind is not None and doc.get("kind", kind) != kind:
        raise ValueError(f"{os.fspath(path)}: expected a '{kind}' document, got '{doc['kind']}'")

    return doc


def write_json(doc: Dict[str, Any], path: PathLike, kind: Optional[str] = None) -> str:
    """
    >>> write_json(doc: Dict[str, Any], path: PathLike, kind: Optional[str] = None) -> str

    Writes a document as indented JSON, stamping `schema_version` (and `kind`) first.
    Key order is preserved so identical documents produce identical bytes.

    Returns
    -------
    * `str` :
        The path written.
    """
    stamped: Dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    if kind is not None:
        stamped["kind"] = kind
    stamped.update({k: v for k, v in doc.items() if k not in stamped})

    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stamped, fh, indent=2)
        fh.write("\n")

    return os.fspath(path)
