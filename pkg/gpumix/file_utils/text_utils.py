import os


def string_to_file(text: str, filename: str) -> str:
    """
    >>> string_to_file(text: str, filename: str) -> str

    Writes text (a report, a CSV export) to a file, creating parent directories.
    A trailing newline is added when missing.

    Parameters
    ----------
    text : str
        Text to be written.
    filename : str
        Destination path.

    Returns
    -------
    * `str` :
        The path written.

    Raises
    ------
    * `TypeError` :
        If the input text is not a string.

    Examples
    --------
    >>> string_to_file("rate,cost\\n1,1.71", "out/costs.csv")
    'out/costs.csv'
    """
    if not isinstance(text, str):
        raise TypeError("text must be a string")

    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)

    if not text.endswith("\n"):
        text += "\n"

    with open(filename, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)

    return filename
