class LotteryError(Exception): pass

class EmptyGroupsError(LotteryError): pass
class NonPositiveError(LotteryError): pass
class DemandNotExceedingSupplyError(LotteryError): pass
class ParamViolationError(LotteryError): pass

class InsufficientTotalError(LotteryError): pass
class ActionOutOfRangeError(LotteryError): pass

class DecompositionFailedError(LotteryError):
    def __init__(self, message: str, residuals: list = None):
        super().__init__(message)
        self.residuals = residuals or []

class TooLargeError(LotteryError): pass
class StateSpaceTooLargeError(TooLargeError): pass
class DomainError(LotteryError): pass
class BoundViolationError(LotteryError): pass

class MalformedInstanceJSONError(LotteryError): pass
class MalformedConstructionJSONError(LotteryError): pass
class MalformedProfileJSONError(LotteryError): pass
