from .app import HANDLERS, classify_error, make_app

__all__ = ["HANDLERS", "classify_error", "make_app"]
