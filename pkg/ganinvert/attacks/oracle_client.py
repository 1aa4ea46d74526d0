"""
Label Oracle Client
Rate-limited, retry-aware access to a black-box label oracle (the deployed
pipeline answers image batches with hard labels only).
"""

import logging
import threading
import time
from typing import Any, Callable, Dict, List, Optional

import torch

from ganinvert.attacks.base_attack import retry_on_failure
from ganinvert.middleware.error_handler import QueryError

logger = logging.getLogger(__name__)

LabelOracle = Callable[[torch.Tensor], torch.Tensor]


class LabelOracleClient:
    """
    Label oracle client with a sliding-window rate limit.

    Every call counts as one request; requests beyond the window limit wait
    until the window frees up (or max_wait elapses).
    """

    def __init__(
        self,
        oracle: LabelOracle,
        num_classes: int,
        max_requests_per_window: Optional[int] = None,
        window_seconds: float = 60.0,
        max_retries: int = 3,
        retry_delay: float = 0.0,
        max_wait: float = 65.0,
    ):
        """
        Args:
            oracle: Image batch → (n,) labels
            num_classes: Valid labels are 0 .. num_classes − 1
            max_requests_per_window: None disables rate limiting
            window_seconds: Rate-limit window
            max_retries: Attempts per query before a QueryError surfaces
            retry_delay: Seconds between attempts
            max_wait: Longest wait for a rate-limit slot
        """
        self.oracle = oracle
        self.num_classes = num_classes
        self.max_requests_per_window = max_requests_per_window
        self.window_seconds = window_seconds
        self.max_wait = max_wait
        self.queries_used = 0
        self.requests_made = 0
        self._request_times: List[float] = []
        self._lock = threading.Lock()
        self._query_with_retry = retry_on_failure(
            max_retries=max_retries, delay=retry_delay, exceptions=(QueryError,)
        )(self._query_once)

    def _check_rate_limit(self) -> bool:
        """
        Check if a request can be made within rate limits.

        Returns:
            bool: True if request can proceed (and records it)
        """
        if self.max_requests_per_window is None:
            return True
        with self._lock:
            now = time.monotonic()
            self._request_times = [t for t in self._request_times if now - t < self.window_seconds]
            if len(self._request_times) >= self.max_requests_per_window:
                return False
            self._request_times.append(now)
            return True

    def _wait_for_rate_limit(self) -> None:
        start = time.monotonic()
        while not self._check_rate_limit():
            if time.monotonic() - start > self.max_wait:
                raise QueryError("rate limit wait timeout exceeded")
            time.sleep(0.05)

    def _query_once(self, x: torch.Tensor) -> torch.Tensor:
        self._wait_for_rate_limit()
        self.requests_made += 1
        try:
            with torch.no_grad():
                labels = self.oracle(x)
        except QueryError:
            raise
        except Exception as e:
            raise QueryError(f"oracle failed: {e}") from e
        labels = torch.as_tensor(labels)
        if labels.shape != (x.shape[0],):
            raise QueryError(f"oracle returned shape {tuple(labels.shape)} for {x.shape[0]} queries")
        labels = labels.long()
        if labels.numel() and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise QueryError("oracle returned a label outside the class range")
        return labels

    def query(self, x: torch.Tensor) -> torch.Tensor:
        """
        Label a batch through the oracle.

        Raises:
            QueryError: Every retry failed
        """
        labels = self._query_with_retry(x)
        self.queries_used += x.shape[0]
        return labels

    def get_quota_status(self) -> Dict[str, Any]:
        """Current usage of the rate-limit window."""
        with self._lock:
            now = time.monotonic()
            self._request_times = [t for t in self._request_times if now - t < self.window_seconds]
            in_window = len(self._request_times)
        remaining = None if self.max_requests_per_window is None else self.max_requests_per_window - in_window
        return {
            "requests_in_window": in_window,
            "requests_remaining": remaining,
            "requests_made": self.requests_made,
            "queries_used": self.queries_used,
        }
