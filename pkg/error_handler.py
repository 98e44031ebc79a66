import asyncio
import traceback
from typing import Optional, Callable, Any, Dict
from functools import wraps
from errors import (
    BlockGraphError,
    ConfigError,
    CorruptionError,
    DegenerateTransactionError,
    InvariantViolationError,
    MissingBlockError,
    NotFoundError,
    ParseError,
    SequencingError,
    TransportError,
    ValuePrecisionError,
    ValueSplitError,
)
from logger import setup_logger

logger = setup_logger(__name__)


class ErrorHandler:
    """Retries node requests and reports command failures."""

    def __init__(self):
        self.error_counts: Dict[str, int] = {}
        self.max_retries = 3
        self.base_delay = 1.0
        self.max_delay = 60.0

    def with_retry(self, max_retries: Optional[int] = None, delay: Optional[float] = None):
        """Wrap a coroutine so transport failures are retried with exponential backoff.

        Args:
            max_retries: Retries after the first attempt (default: self.max_retries)
            delay: Wait before the first retry, doubled each time (default: self.base_delay)
        """
        def decorator(func: Callable) -> Callable:
            @wraps(func)
            async def wrapper(*args, **kwargs):
                retries = self.max_retries if max_retries is None else max_retries
                current_delay = self.base_delay if delay is None else delay

                for attempt in range(retries + 1):
                    try:
                        return await func(*args, **kwargs)
                    except Exception as e:
                        if not self._should_retry(e):
                            logger.debug(f"{func.__name__}: {type(e).__name__} is not retried: {e}")
                            raise

                        if attempt == retries:
                            logger.error(f"{func.__name__} gave up after {retries} retries: {e}")
                            raise

                        wait_time = min(current_delay * (2 ** attempt), self.max_delay)
                        logger.warning(f"{func.__name__} attempt {attempt + 1} failed, next try in {wait_time}s: {e}")
                        await asyncio.sleep(wait_time)

            return wrapper
        return decorator

    def _should_retry(self, error: Exception) -> bool:
        # Transport failures only; a missing block or a parse error will not heal
        return isinstance(error, (TransportError, ConnectionError, TimeoutError, asyncio.TimeoutError))

    def exit_code_for(self, error: BaseException) -> int:
        """Map an exception to the process exit code.

        Args:
            error: The exception that stopped the command

        Returns:
            int: 1 config, 2 transport/parse, 3 sequencing, 4 invariant
        """
        if isinstance(error, BlockGraphError):
            return error.exit_code
        return 1

    def log_error_with_context(self, error: Exception, context: Dict[str, Any]):
        """Log one structured error line, e.g. ``{'error_type': 'ParseError', 'command': 'build', ...}``.

        Args:
            error: The exception that stopped a command or a sample
            context: Where it happened (command, height, txid, sample_id, ...)
        """
        try:
            record = {'error_type': type(error).__name__, 'error_message': str(error), **context}
            if getattr(error, 'offset', None) is not None:
                record['offset'] = error.offset
            logger.error(f"{record}")
            logger.debug(traceback.format_exc())

            key = f"{type(error).__name__}:{str(error)[:100]}"
            self.error_counts[key] = self.error_counts.get(key, 0) + 1
            if self.error_counts[key] > 5:
                logger.warning(f"Repeated error: {key} (count: {self.error_counts[key]})")

        except Exception as e:
            logger.error(f"Could not log error: {e}")


# Module-wide handler
error_handler = ErrorHandler()
