class ShapeMismatchError(ValueError):
    def __init__(self, expected, actual, what: str = "shape"):
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{what} mismatch: {self.expected} vs {self.actual}")


class TensorFormatError(ValueError):
    pass


class UnsupportedArchitectureError(TypeError):
    pass


class DegenerateDistributionError(ValueError):
    pass


class DistributionMismatchError(ValueError):
    pass


class ArtifactMissingError(FileNotFoundError):
    def __init__(self, path, what: str = "artifact"):
        self.path = str(path)
        super().__init__(f"missing {what}: {self.path}")
