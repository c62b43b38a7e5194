"""Concrete syntax: parsing, printing, well-formedness and lowering."""
from dvl.dsl.lower import Lowered, LoweringError, load, lower
from dvl.dsl.parser import ParseDiagnostic, parse, parse_action, parse_cond, parse_expr, parse_formula
from dvl.dsl.printer import pretty_print

__all__ = ["Lowered", "LoweringError", "ParseDiagnostic", "load", "lower", "parse",
           "parse_action", "parse_cond", "parse_expr", "parse_formula", "pretty_print"]
