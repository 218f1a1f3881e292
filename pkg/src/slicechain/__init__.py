"""Permissioned-ledger simulator for brokering network-slice resources."""

__version__ = "0.1.0"
