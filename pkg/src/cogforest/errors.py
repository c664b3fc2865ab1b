class InputError(ValueError):
    """Raised when caller-supplied data or parameters violate a precondition."""
