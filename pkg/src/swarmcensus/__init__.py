"""Torrent census: DHT infohash harvesting, metadata retrieval, release-name parsing and title matching."""

__version__ = "0.1.0"
