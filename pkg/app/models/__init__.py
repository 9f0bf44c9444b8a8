from app.models.ledger import LedgerState, ProfitReport, TokenId, profit, usd_value

__all__ = ["LedgerState", "ProfitReport", "TokenId", "profit", "usd_value"]
