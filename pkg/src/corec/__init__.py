"""corec: crisis-dispatch platform recommending citizen-volunteer assignments."""

__version__ = "0.1.0"
