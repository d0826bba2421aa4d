"""Micro-batch ingestion gateway for a segmented column store.

The package wires an HTTP ingest listener into a lock-free record
pipeline that is drained by a pool of transaction slots.  A policy
driven scheduler keeps the pool close to the smallest size that still
hides transaction start and commit latency behind the collection
interval.  A deterministic discrete-event simulator shares the
scheduler's decision code so policy behaviour can be studied offline.
"""

__version__ = "0.1.0"
