"""Exception types shared across the toolkit."""


class HierDPError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(HierDPError):
    """Schema definition or schema/data mismatch."""


class ValidationError(HierDPError):
    """A value violates a domain, tree, or table invariant."""


class BudgetExceededError(HierDPError):
    """A privacy spend would overdraw the ledger."""


class InfeasibleQueryError(HierDPError):
    """A query-set request exceeds the number of admissible queries."""
