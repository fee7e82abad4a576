from .app import app, create_app  # noqa: F401
