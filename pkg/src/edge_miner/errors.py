"""Exception hierarchy for the edge miner components."""

from typing import Optional


class EdgeMinerError(Exception):
    """Base class for every error raised by edge_miner."""


class ConfigError(EdgeMinerError):
    """Invalid experiment, workload or contract configuration."""


# Wire codec
class CodecError(EdgeMinerError):
    """Serialization or cryptographic primitive failure."""


class DecodeError(CodecError):
    """Encoded record is malformed (missing/extra keys, bad hex)."""


class PlaintextTooLarge(CodecError):
    """Plaintext exceeds the OAEP capacity of a 2048-bit key."""

    def __init__(self, size: int, capacity: int):
        super().__init__(f"plaintext of {size} bytes exceeds OAEP capacity {capacity}")
        self.size = size
        self.capacity = capacity


class DecryptFailure(CodecError):
    """Ciphertext is malformed or keyed to another recipient."""


# Verification
class VerificationError(EdgeMinerError):
    """A transaction failed one of the ordered verification steps."""

    step = "verify"

    def __init__(self, message: str, txn_hash: Optional[str] = None):
        super().__init__(f"[{self.step}] {message}")
        self.txn_hash = txn_hash


class BadSignature(VerificationError):
    step = "signature"


class TransactionDecryptFailure(VerificationError, DecryptFailure):
    step = "decrypt"


class HashMismatch(VerificationError):
    step = "hash"


# Contracts
class ContractError(EdgeMinerError):
    """Contract registry or execution error."""


class DuplicateContract(ContractError):
    pass


class UnknownContract(ContractError):
    pass


class UnknownTopic(ContractError):
    pass


class MissingField(ContractError):
    pass


class NotAnExecutor(ContractError):
    pass


# Consensus
class ConsensusError(EdgeMinerError):
    pass


class MissingValidatorKey(ConsensusError):
    pass


class NoEligibleLeader(ConsensusError):
    pass


# Storage
class StorageError(EdgeMinerError):
    pass


class StorageFull(StorageError):
    """In-chain records are at the offload threshold and the fog is down."""


class FogUnreachable(StorageError):
    pass


class InconsistentBundle(StorageError):
    pass


class NotFound(StorageError):
    pass


# Transport
class TransportError(EdgeMinerError):
    pass


class PayloadOverCap(TransportError):
    def __init__(self, size: int, cap: int):
        super().__init__(f"payload of {size} bytes exceeds datagram cap {cap}")
        self.size = size
        self.cap = cap


class UnknownEndpoint(TransportError):
    pass


class EndpointUnreachable(TransportError):
    pass


# Harness
class HarnessError(EdgeMinerError):
    pass


class StallDetected(HarnessError):
    pass


class TooShort(HarnessError):
    pass


class EmptyTrace(HarnessError):
    pass
