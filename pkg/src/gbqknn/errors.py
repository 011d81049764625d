class DataError(ValueError):
    """Invalid input data: empty sets, out-of-range values, malformed files."""


class IndexFormatError(DataError):
    """A serialized index or model could not be parsed."""

    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} (at byte {position})")
        self.position = position
