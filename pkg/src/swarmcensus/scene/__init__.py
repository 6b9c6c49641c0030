"""Scene release-name parsing and file classification."""

from .parser import (FLAG_NAMES, FileClass, ParsedName, SceneParser, Vocabulary, classify_file,
                     default_vocabulary, parse)

__all__ = ["FLAG_NAMES", "FileClass", "ParsedName", "SceneParser", "Vocabulary", "classify_file",
           "default_vocabulary", "parse"]
