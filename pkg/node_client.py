import asyncio
from typing import Optional
import requests
from asyncio_throttle import Throttler
from block_parser import BlockRecord, block_parser
from config import Config
from error_handler import NotFoundError, ParseError, TransportError, error_handler
from logger import setup_logger

logger = setup_logger(__name__)


class NodeClient:
    """Client for a Bitcoin Core REST interface (node started with rest=1 and txindex=1)."""

    def __init__(self, endpoint: Optional[str] = None, timeout: Optional[float] = None,
                 max_retries: Optional[int] = None, rate_limit: Optional[int] = None,
                 rate_period: Optional[float] = None, session: Optional[requests.Session] = None):
        """Initialize the node client.

        Args:
            endpoint: Base URL such as http://127.0.0.1:8332
            timeout: Per-request timeout in seconds
            max_retries: Retries of transport failures in the async fetch path
            rate_limit: Requests allowed per rate_period
            rate_period: Rate limit window in seconds
            session: Optional pre-built requests session
        """
        self.endpoint = (endpoint or Config.ENDPOINT).rstrip('/')
        self.timeout = timeout if timeout is not None else Config.REQUEST_TIMEOUT
        self.max_retries = max_retries if max_retries is not None else Config.MAX_RETRIES
        self.session = session or requests.Session()

        # Rate limiting to spare the node
        self.throttler = Throttler(
            rate_limit=rate_limit or Config.RATE_LIMIT_REQUESTS,
            period=rate_period or Config.RATE_LIMIT_PERIOD
        )

    def _get(self, path: str) -> requests.Response:
        url = f"{self.endpoint}/rest/{path}"
        try:
            response = self.session.get(url, timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportError(f"GET {url} failed: {e}")

        if response.status_code in (400, 404):
            raise NotFoundError(f"GET {url}: {response.status_code} {response.text.strip()[:200]}")
        if response.status_code >= 500:
            raise TransportError(f"GET {url}: server error {response.status_code}")
        if response.status_code != 200:
            raise TransportError(f"GET {url}: unexpected status {response.status_code}")
        return response

    def get_block_hash(self, height: int) -> str:
        """Resolve a height to its block hash.

        Args:
            height: Block height

        Returns:
            str: 64-char lowercase hex hash

        Raises:
            TransportError: Network failure (retriable)
            NotFoundError: Height beyond the tip
        """
        if height < 0:
            raise NotFoundError(f"Negative block height {height}")
        block_hash = self._get(f"blockhashbyheight/{height}.hex").text.strip().lower()
        if len(block_hash) != 64 or any(c not in '0123456789abcdef' for c in block_hash):
            raise ParseError(f"Node returned a malformed hash for height {height}: {block_hash[:80]!r}", offset=0)
        return block_hash

    def get_block_bytes(self, block_hash: str) -> bytes:
        """Raw JSON document of a block."""
        return self._get(f"block/{block_hash}.json").content

    def get_block(self, block_hash: str) -> BlockRecord:
        """Fetch and parse one block.

        Raises:
            NotFoundError: Unknown hash
            ParseError: Malformed JSON, with byte offset
            ValuePrecisionError: An amount with more than 8 fractional digits
        """
        return block_parser.parse(self.get_block_bytes(block_hash))

    def get_tip_height(self) -> int:
        """Current chain height as reported by rest/chaininfo.json."""
        response = self._get("chaininfo.json")
        try:
            return int(response.json()['blocks'])
        except (ValueError, KeyError, TypeError) as e:
            raise ParseError(f"Unexpected chaininfo document: {e}")

    async def fetch_block_at(self, height: int) -> BlockRecord:
        """Two-step fetch (hash, then block) off the event loop, throttled and retried."""
        fetch = error_handler.with_retry(max_retries=self.max_retries)(self._fetch_block_at)
        return await fetch(height)

    async def _fetch_block_at(self, height: int) -> BlockRecord:
        loop = asyncio.get_running_loop()
        async with self.throttler:
            block_hash = await loop.run_in_executor(None, self.get_block_hash, height)
        async with self.throttler:
            raw = await loop.run_in_executor(None, self.get_block_bytes, block_hash)
        block = block_parser.parse(raw)
        logger.debug(f"Fetched block {height} ({block_hash[:16]}..., {block.n_tx} txs)")
        return block

    def close(self):
        self.session.close()


def get_block_hash(height: int, endpoint: str) -> str:
    """Module-level convenience around NodeClient.get_block_hash."""
    return NodeClient(endpoint).get_block_hash(height)


def get_block(block_hash: str, endpoint: str) -> BlockRecord:
    """Module-level convenience around NodeClient.get_block."""
    return NodeClient(endpoint).get_block(block_hash)
