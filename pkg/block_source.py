import asyncio
import os
from collections import deque
from typing import AsyncIterator, Iterator, Optional
import aiofiles
from block_parser import BlockRecord, block_parser
from error_handler import ConfigError, MissingBlockError, SequencingError
from node_client import NodeClient
from logger import setup_logger

logger = setup_logger(__name__)


class BlockSource:
    """Where blocks come from: a REST endpoint or a directory of {height}.json fixtures."""

    def __init__(self, endpoint: Optional[str] = None, fixture_dir: Optional[str] = None,
                 prefetch_window: int = 8, client: Optional[NodeClient] = None):
        if bool(endpoint or client) == bool(fixture_dir):
            raise ConfigError("Exactly one of endpoint or fixture_dir must be given")
        self.fixture_dir = fixture_dir
        self.client = client or (NodeClient(endpoint) if endpoint else None)
        self.prefetch_window = max(1, prefetch_window)

    @classmethod
    def from_run_config(cls, run_config) -> 'BlockSource':
        client = None
        if run_config.endpoint:
            client = NodeClient(
                run_config.endpoint,
                timeout=run_config.request_timeout,
                max_retries=run_config.max_retries,
                rate_limit=run_config.rate_limit_requests,
                rate_period=run_config.rate_limit_period,
            )
        return cls(fixture_dir=run_config.fixture_dir, prefetch_window=run_config.prefetch_window, client=client)

    @property
    def mode(self) -> str:
        return 'fixture' if self.fixture_dir else 'rest'

    def fixture_path(self, height: int) -> str:
        return os.path.join(self.fixture_dir, f"{height}.json")

    async def load(self, height: int) -> BlockRecord:
        """Fetch and parse the block at one height."""
        if self.fixture_dir:
            path = self.fixture_path(height)
            if not os.path.exists(path):
                raise MissingBlockError(f"Missing block {height}: no fixture {path}")
            async with aiofiles.open(path, 'rb') as f:
                raw = await f.read()
            block = block_parser.parse(raw)
        else:
            block = await self.client.fetch_block_at(height)

        if block.height != height:
            raise SequencingError(f"Asked for block {height}, source returned height {block.height}")
        return block

    def tip_height(self) -> Optional[int]:
        """Chain tip in REST mode; None for fixtures."""
        if self.client is None:
            return None
        return self.client.get_tip_height()

    def close(self):
        if self.client is not None:
            self.client.close()


def _check_range(h_lo: int, h_hi: int):
    if h_lo < 0:
        raise SequencingError(f"Negative start height {h_lo}")
    if h_lo > h_hi:
        raise SequencingError(f"Empty height range [{h_lo}, {h_hi}]")


async def aiter_blocks(h_lo: int, h_hi: int, source: BlockSource) -> AsyncIterator[BlockRecord]:
    """Yield blocks h_lo..h_hi in ascending order with a bounded prefetch window.

    Raises:
        SequencingError: Empty range
        MissingBlockError: A fixture height is absent
    """
    _check_range(h_lo, h_hi)
    if source.fixture_dir:
        for height in range(h_lo, h_hi + 1):
            if not os.path.exists(source.fixture_path(height)):
                raise MissingBlockError(f"Missing block {height} in fixture directory {source.fixture_dir}")

    pending = deque()
    next_height = h_lo
    try:
        while next_height <= h_hi or pending:
            while next_height <= h_hi and len(pending) < source.prefetch_window:
                pending.append(asyncio.ensure_future(source.load(next_height)))
                next_height += 1
            yield await pending.popleft()
    finally:
        for task in pending:
            task.cancel()
        if pending:
            await asyncio.gather(*pending, return_exceptions=True)


def iter_blocks(h_lo: int, h_hi: int, source: BlockSource) -> Iterator[BlockRecord]:
    """Synchronous view of aiter_blocks for callers outside an event loop."""
    _check_range(h_lo, h_hi)
    loop = asyncio.new_event_loop()
    agen = aiter_blocks(h_lo, h_hi, source)
    try:
        while True:
            try:
                block = loop.run_until_complete(agen.__anext__())
            except StopAsyncIteration:
                break
            yield block
    finally:
        loop.run_until_complete(agen.aclose())
        loop.run_until_complete(loop.shutdown_default_executor())
        loop.close()
