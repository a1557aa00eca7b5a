"""Phonological and phonetic class inventories and the toy phone set mapped onto them."""

from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, Sequence, Tuple

import numpy as np

from phonovoc.utils.errors import ConfigError


@dataclass(frozen=True)
class PhonologicalScheme:
    """A named inventory of phonological classes."""

    name: str
    scheme_id: int
    class_names: Tuple[str, ...]
    phone_classes: Dict[str, FrozenSet[str]]

    @property
    def k(self) -> int:
        return len(self.class_names)

    def phone_bits(self, phone: str) -> np.ndarray:
        """
        Return the K-bit class vector of a toy phone.

        Args:
            phone: Phone symbol from the toy phone set

        Returns:
            np.ndarray: uint8 vector of length K

        Raises:
            KeyError: If the phone is not mapped in this scheme
        """
        active = self.phone_classes[phone]
        return np.array([1 if name in active else 0 for name in self.class_names], dtype=np.uint8)

    def with_class_order(self, class_names: Sequence[str]) -> "PhonologicalScheme":
        """
        The same scheme with its classes listed in the given order.

        Raises:
            ConfigError: If a name is not a class of this scheme, or the
                names are not a permutation of the scheme's classes
        """
        class_names = tuple(class_names)
        unknown = [name for name in class_names if name not in self.class_names]
        if unknown:
            raise ConfigError(f"Unknown class name(s) for scheme {self.name}: {', '.join(unknown)}")
        if sorted(class_names) != sorted(self.class_names):
            raise ConfigError(f"class_names must list each of the {self.k} {self.name} classes exactly once")
        return replace(self, class_names=class_names)


GP_CLASSES = ("A", "a", "E", "H", "h", "I", "i", "N", "S", "u", "U", "silence")

SPE_CLASSES = (
    "vocalic", "consonantal", "high", "back", "low", "anterior", "coronal",
    "round", "tense", "voice", "continuant", "nasal", "strident", "rising",
    "silence",
)

ESPE_CLASSES = (
    "anterior", "approximant", "back", "continuant", "coronal", "dental",
    "fricative", "glottal", "high", "labial", "low", "mid", "nasal",
    "retroflex", "round", "stop", "tense", "velar", "voiced", "vowel",
    "silence",
)

# Toy phone set: five vowels, three plosives, one nasal, plosive closure, silence
TOY_VOWELS = ("a", "e", "i", "o", "u")
TOY_CONSONANTS = ("p", "t", "k", "m")

_GP_PHONES = {
    "a": {"A", "a"},
    "e": {"A", "I", "E"},
    "i": {"I", "i"},
    "o": {"A", "U"},
    "u": {"U", "u"},
    "p": {"S", "H", "U"},
    "t": {"S", "H", "I"},
    "k": {"S", "H", "h"},
    "m": {"N", "U"},
    "cl": {"S"},
    "sil": {"silence"},
}

_SPE_PHONES = {
    "a": {"vocalic", "back", "low", "voice", "continuant"},
    "e": {"vocalic", "tense", "voice", "continuant"},
    "i": {"vocalic", "high", "tense", "voice", "continuant"},
    "o": {"vocalic", "back", "round", "tense", "voice", "continuant"},
    "u": {"vocalic", "high", "back", "round", "tense", "voice", "continuant"},
    "p": {"consonantal", "anterior"},
    "t": {"consonantal", "anterior", "coronal"},
    "k": {"consonantal", "high", "back"},
    "m": {"consonantal", "anterior", "nasal", "voice"},
    "cl": {"consonantal"},
    "sil": {"silence"},
}

_ESPE_PHONES = {
    "a": {"vowel", "low", "back", "voiced", "continuant"},
    "e": {"vowel", "mid", "tense", "voiced", "continuant"},
    "i": {"vowel", "high", "tense", "voiced", "continuant"},
    "o": {"vowel", "mid", "back", "round", "voiced", "continuant"},
    "u": {"vowel", "high", "back", "round", "tense", "voiced", "continuant"},
    "p": {"stop", "labial", "anterior"},
    "t": {"stop", "coronal", "anterior"},
    "k": {"stop", "velar", "back", "high"},
    "m": {"nasal", "labial", "anterior", "voiced"},
    "cl": {"stop"},
    "sil": {"silence"},
}


# Phonetic posteriors: one class per toy phone, closure and silence included
PHONE_CLASSES = (*TOY_VOWELS, *TOY_CONSONANTS, "cl", "sil")

_PHONE_PHONES = {phone: {phone} for phone in PHONE_CLASSES}


def _freeze(table):
    return {phone: frozenset(classes) for phone, classes in table.items()}


SCHEMES: Dict[str, PhonologicalScheme] = {
    "GP": PhonologicalScheme("GP", 0, GP_CLASSES, _freeze(_GP_PHONES)),
    "SPE": PhonologicalScheme("SPE", 1, SPE_CLASSES, _freeze(_SPE_PHONES)),
    "eSPE": PhonologicalScheme("eSPE", 2, ESPE_CLASSES, _freeze(_ESPE_PHONES)),
    "phone": PhonologicalScheme("phone", 3, PHONE_CLASSES, _freeze(_PHONE_PHONES)),
}

EXPECTED_K = {"GP": 12, "SPE": 15, "eSPE": 21, "phone": 11}


def get_scheme(name: str) -> PhonologicalScheme:
    """
    Look up a scheme by name.

    Raises:
        ConfigError: If the scheme is unknown
    """
    if name not in SCHEMES:
        raise ConfigError(f"Unknown phonological scheme: {name}. Expected one of {sorted(SCHEMES)}")
    return SCHEMES[name]


def scheme_by_id(scheme_id: int) -> PhonologicalScheme:
    for scheme in SCHEMES.values():
        if scheme.scheme_id == scheme_id:
            return scheme
    raise ConfigError(f"Unknown scheme id: {scheme_id}")
