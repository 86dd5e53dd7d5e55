"""Edge Miner

Software-defined blockchain components (smart contracts, PBFT consensus,
in-chain metadata) hosted on simulated edge miners.
"""

__version__ = "0.1.0"
