"""Platform and entity-type enumerations used throughout the package."""

from __future__ import annotations

from enum import Enum


class Platform(str, Enum):
    """Supported source platforms, in canonical reporting order."""

    X_TWITTER = "x_twitter"
    INSTAGRAM = "instagram"
    YOUTUBE = "youtube"
    TIKTOK = "tiktok"
    FACEBOOK = "facebook"
    TELEGRAM = "telegram"
    BLUESKY = "bluesky"

    def __str__(self) -> str:  # keep f-strings rendering the bare token
        return self.value


class MainType(str, Enum):
    """Top-level classification of a tracked entity."""

    POLITICIAN = "politician"
    NEWS = "news"
    INFLUENCER = "influencer"
    GOVERNMENT = "government"
    CSO = "cso"
    FOREIGN = "foreign"

    def __str__(self) -> str:
        return self.value


def parse_platform(token: str) -> Platform:
    try:
        return Platform(token.strip().lower())
    except ValueError:
        raise ValueError(f"unknown platform: {token!r}") from None


def parse_main_type(token: str) -> MainType:
    try:
        return MainType(token.strip().lower())
    except ValueError:
        raise ValueError(f"unknown main_type: {token!r}") from None
