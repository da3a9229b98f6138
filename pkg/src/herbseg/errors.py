"""Shared exception types."""


class BackendError(RuntimeError):
    """A detection or segmentation backend failed to load or run."""


class PatchError(RuntimeError):
    """A backend error annotated with the grid position of the failing patch."""

    def __init__(self, grid_row, grid_col, cause):
        super().__init__(f"patch r{grid_row} c{grid_col}: {cause}")
        self.grid_row = grid_row
        self.grid_col = grid_col
        self.cause = cause
