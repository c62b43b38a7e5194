from __future__ import annotations

import re
from dataclasses import dataclass

from dvl.syntax import Span

KEYWORDS = {
    "type", "chan", "cap", "dom", "logic", "var", "invariant", "node", "program",
    "init", "start", "loc", "when", "await", "do", "as", "goto", "outline",
    "target", "payload", "proof", "axiom", "seq", "consequence", "frame",
    "envcomp", "nodeenv", "nodecomp", "at", "pre", "post", "claim", "skip",
    "alloc", "free", "acquire", "release", "emp", "top", "true", "false",
    "bool", "ptr",
}

# longest operators first
_OPERATORS = [
    "||N", "|->", ":=", "==", "!=", "<=", ">=", "-<", "<>", "||", "..",
    "{", "}", "(", ")", "[", "]", ",", ":", "=", "<", ">", "+", "-", "*",
    "&", "|", "~", "!", "?", "#", "@",
]

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>//[^\n]*|%[^\n]*)"
    r"|(?P<int>\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_']*)"
)


@dataclass(frozen=True)
class Token:
    kind: str  # "int" | "ident" | "kw" | "op" | "eof"
    text: str
    span: Span


class LexError(Exception):
    def __init__(self, message: str, span: Span):
        super().__init__(message)
        self.span = span


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        col = pos - line_start + 1
        m = _TOKEN_RE.match(text, pos)
        if m:
            kind = m.lastgroup
            s = m.group()
            if kind == "nl":
                line += 1
                line_start = m.end()
            elif kind == "int":
                tokens.append(Token("int", s, Span(line, col, len(s))))
            elif kind == "ident":
                tokens.append(Token("kw" if s in KEYWORDS else "ident", s, Span(line, col, len(s))))
            pos = m.end()
            continue
        for op in _OPERATORS:
            if text.startswith(op, pos):
                if op == "||N":
                    after = text[pos + 3:pos + 4]
                    if after and (after.isalnum() or after in "_'"):
                        continue
                tokens.append(Token("op", op, Span(line, col, len(op))))
                pos += len(op)
                break
        else:
            raise LexError(f"unexpected character {text[pos]!r}", Span(line, col, 1))
    col = pos - line_start + 1
    tokens.append(Token("eof", "", Span(line, col, 0)))
    return tokens
