"""Deterministic simulated DHT world for end-to-end runs."""

from .corpus import SyntheticTorrent, generate_catalog, generate_corpus
from .loop import EventLoop, Handle
from .world import (CrawlResult, Network, NodeRuntime, SimNode, SimWorld, WorldConfig,
                    WorldConfigError, build_world, run_crawl)

__all__ = ["SyntheticTorrent", "generate_catalog", "generate_corpus", "EventLoop", "Handle",
           "CrawlResult", "Network", "NodeRuntime", "SimNode", "SimWorld", "WorldConfig",
           "WorldConfigError", "build_world", "run_crawl"]
