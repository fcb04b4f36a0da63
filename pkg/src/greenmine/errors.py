class GreenmineError(Exception):
    """Base class for errors raised by greenmine."""
