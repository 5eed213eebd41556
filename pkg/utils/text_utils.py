import re


_SLUG_PATTERN = re.compile(r"[^a-z0-9]+")


def normalize_text(text: str) -> str:
    return " ".join(text.strip().lower().split())


def slugify(value: str) -> str:
    slug = _SLUG_PATTERN.sub("-", value.strip().lower())
    return slug.strip("-")


def contains_phrase(haystack: str, needle: str) -> bool:
    needle = normalize_text(needle)
    if not needle:
        return False
    return needle in normalize_text(haystack)
