"""Exception types shared across the package."""


class TreespectError(Exception):
    """Base class for all errors raised by this package."""


class NewickError(TreespectError):
    """Malformed Newick text. Carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class StructureError(TreespectError):
    """A tree violates the binary unrooted-tree invariants."""


class LabelError(TreespectError):
    """Unknown leaf label, duplicate label, or mismatched leaf sets."""


class DegeneratePartitionError(TreespectError):
    """A partition step produced an empty side (e.g. one-signed vector)."""


class DegenerateBlockError(TreespectError):
    """A similarity block needed for scoring has zero Frobenius norm."""


class DisconnectedGraphError(TreespectError):
    """The similarity graph is numerically disconnected (lambda_2 ~ 0)."""


class EigensolverError(TreespectError):
    """An iterative eigensolver failed to reach the requested residual."""


class SubroutineError(TreespectError):
    """An external tree-building subprocess failed (exit code, timeout,
    unparseable output, or label mismatch)."""
