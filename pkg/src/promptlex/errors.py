"""Exception types shared across the package."""


class PromptlexError(Exception):
    """Base class for all errors raised by promptlex."""


class ConfigError(PromptlexError, ValueError):
    """Invalid configuration or precondition violation."""


class ParseError(PromptlexError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class OverLengthError(PromptlexError, ValueError):
    """A word segments into more sub-tokens than the span allows."""

    def __init__(self, word, count, n):
        super().__init__(f"{word!r} has {count} sub-tokens, span length is {n}")
        self.word = word
        self.count = count
        self.n = n


class UnknownWordError(PromptlexError, KeyError):
    """Word not present in an embedding vocabulary."""

    def __init__(self, word):
        super().__init__(word)
        self.word = word

    def __str__(self):
        return f"unknown word: {self.word!r}"
