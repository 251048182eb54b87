"""Bilingual lexicon induction with padded prompting of a masked LM."""

__version__ = "0.1.0"
