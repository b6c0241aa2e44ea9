"""Chinese text classification from characters, radicals, Wubi and Pinyin."""

__version__ = "0.1.0"
