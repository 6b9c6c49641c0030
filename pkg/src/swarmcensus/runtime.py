"""Event-loop contract shared by the live transport and the simulator.

Protocol objects (DHT engine, metadata client) only ever talk to a runtime
through this small surface, which deliberately matches the subset of
:mod:`asyncio` they need:

* ``time()`` and ``call_later(delay, cb, *args)`` returning a cancellable handle
* ``sendto(data, addr)`` for UDP datagrams from the bound endpoint
* ``connect(addr, protocol)`` opening a TCP stream; the protocol receives
  ``connection_made(transport)``, ``data_received(data)`` and
  ``connection_lost(exc)`` exactly like an :class:`asyncio.Protocol`.

:class:`LiveRuntime` adapts a real asyncio loop; ``swarmcensus.sim`` provides
the virtual-time implementation.
"""

from __future__ import annotations

import asyncio
import logging
from typing import Callable

log = logging.getLogger(__name__)


class LiveRuntime:
    def __init__(self, loop: asyncio.AbstractEventLoop | None = None):
        self.loop = loop or asyncio.get_event_loop()
        self._udp: asyncio.DatagramTransport | None = None
        self._on_datagram: Callable | None = None
        self._tasks: set = set()

    def time(self) -> float:
        return self.loop.time()

    def call_later(self, delay: float, callback: Callable, *args):
        return self.loop.call_later(max(0.0, delay), callback, *args)

    async def bind_udp(self, host: str, port: int, on_datagram: Callable) -> tuple:
        runtime = self

        class _Proto(asyncio.DatagramProtocol):
            def datagram_received(self, data, addr):
                runtime._on_datagram(data, addr[:2])

            def error_received(self, exc):
                log.debug("udp error: %s", exc)

        self._on_datagram = on_datagram
        self._udp, _ = await self.loop.create_datagram_endpoint(_Proto, local_addr=(host, port))
        return self._udp.get_extra_info("sockname")[:2]

    def sendto(self, data: bytes, addr: tuple) -> None:
        if self._udp is not None and not self._udp.is_closing():
            self._udp.sendto(data, addr)

    def connect(self, addr: tuple, protocol) -> None:
        async def _open():
            try:
                await self.loop.create_connection(lambda: protocol, addr[0], addr[1])
            except OSError as exc:
                protocol.connection_lost(exc)

        task = self.loop.create_task(_open())
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    def close(self) -> None:
        if self._udp is not None:
            self._udp.close()
