"""Live endpoint adapters.

These keep the Source surface for the public metadata API and a Polygon RPC
node but do not talk to the network; they are enabled only with
``source: live`` and fail with SourceUnavailable until wired to a client.
"""
from __future__ import annotations

import os

from ..errors import SourceUnavailable
from .base import Source

RPC_URL_ENV = "PMLIFE_POLYGON_RPC_URL"
GAMMA_URL_ENV = "PMLIFE_GAMMA_URL"


class LiveSource(Source):
    def __init__(self, fill_exchanges=(), oracle_contracts=()):
        super().__init__()
        self.rpc_url = os.environ.get(RPC_URL_ENV)
        self.gamma_url = os.environ.get(GAMMA_URL_ENV, "https://gamma-api.polymarket.com")
        self.fill_exchanges = tuple(fill_exchanges)
        self.oracle_contracts = tuple(oracle_contracts)

    def _unavailable(self, what):
        endpoint = self.rpc_url or f"${RPC_URL_ENV} (unset)"
        raise SourceUnavailable(f"live {what} adapter has no client for {endpoint}")

    def head_block(self):
        self._unavailable("chain head")

    def poll_markets(self, cursor, until_block=None):
        self._unavailable("market metadata")

    def poll_fills(self, from_block, to_block):
        self._unavailable("OrderFilled")

    def poll_oracle_events(self, cursor, until_block=None):
        self._unavailable("oracle")

    def scan_token_registrations(self, from_block, to_block):
        self._unavailable("TokenRegistered")

    def block_timestamp(self, block):
        self._unavailable("block timestamp")
