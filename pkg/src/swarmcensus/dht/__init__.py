"""Kademlia / KRPC engine for BitTorrent's mainline DHT."""

from .crawler import BootstrapError, Crawler, CrawlerConfig, Telemetry, harvest_infohashes
from .engine import DhtEngine, QueryTimeout, RemoteError
from .ids import (COMPACT_NODE_LEN, COMPACT_PEER_LEN, Contact, pack_addr, pack_nodes, random_id,
                  shared_prefix_len, unpack_addr, unpack_nodes, xor_distance)
from .krpc import KrpcError, KrpcMessage, TokenManager
from .lookup import Lookup, LookupResult, NoRoute
from .routing import InsertOutcome, Liveness, RoutingTable

__all__ = [
    "BootstrapError", "Crawler", "CrawlerConfig", "Telemetry", "harvest_infohashes",
    "DhtEngine", "QueryTimeout", "RemoteError", "COMPACT_NODE_LEN", "COMPACT_PEER_LEN",
    "Contact", "pack_addr", "pack_nodes", "random_id", "shared_prefix_len", "unpack_addr",
    "unpack_nodes", "xor_distance", "KrpcError", "KrpcMessage", "TokenManager", "Lookup",
    "LookupResult", "NoRoute", "InsertOutcome", "Liveness", "RoutingTable",
]
