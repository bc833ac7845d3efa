"""SQL dialect over the single table MasksDatabaseView.

The grammar is a closed dialect (no joins, fixed select list) covering three
statement families: filter (WHERE on a pixel-count expression), top-k
(ORDER BY ... LIMIT), and grouped aggregation (GROUP BY image_id with
scalar aggregates or derived-mask aggregates).  Statements may contain bare
identifiers (roi, lv, uv, T, K, n, ...) that are bound from a params mapping
at parse time, so template text can be parsed directly given the values.

Errors carry positions and format as ``line:col: message``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

from .catalog import Catalog
from .masks import Roi, ValueRange

KEY_COLUMNS = ("mask_id", "image_id")
COMPARATORS = ("<", "<=", ">", ">=")
SCALAR_AGGS = ("SUM", "AVG", "MIN", "MAX")
MASK_AGG_OPS = ("intersect", "union")
TABLE_NAME = "MasksDatabaseView"
DEFAULT_AGG_THRESHOLD = 0.5


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
        self.message = message


class ValidationError(ValueError):
    pass


# --- logical plan -----------------------------------------------------------

@dataclass(frozen=True)
class MaskAgg:
    """Derived group mask: binarize members at `threshold` (v > t), then combine."""

    op: str
    threshold: float

    def __post_init__(self) -> None:
        if self.op not in MASK_AGG_OPS:
            raise ValueError(f"unknown mask aggregation op {self.op!r}")
        if not (0.0 <= self.threshold <= 1.0):
            raise ValueError("mask threshold must be in [0, 1]")


@dataclass(frozen=True)
class RoiSpec:
    """Where the ROI comes from: a constant rectangle, the per-image object
    box, or the whole mask."""

    kind: str
    rect: Roi | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "object", "full_img"):
            raise ValueError(f"unknown roi kind {self.kind!r}")
        if (self.kind == "constant") != (self.rect is not None):
            raise ValueError("constant roi requires a rectangle, named roi forbids one")

    @staticmethod
    def constant(r0: int, c0: int, r1: int, c1: int) -> "RoiSpec":
        return RoiSpec("constant", Roi(r0, c0, r1, c1))


@dataclass(frozen=True)
class CpAtom:
    """One pixel-count term: CP(target, roi, range)."""

    roi: RoiSpec
    vrange: ValueRange
    agg: MaskAgg | None = None


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class AreaOf:
    roi: RoiSpec


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self) -> None:
        if self.op not in ("+", "-", "*", "/"):
            raise ValueError(f"unknown operator {self.op!r}")


Expr = CpAtom | Const | AreaOf | BinOp


@dataclass(frozen=True)
class Predicate:
    expr: Expr
    cmp: str
    threshold: float

    def __post_init__(self) -> None:
        if self.cmp not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.cmp!r}")


@dataclass(frozen=True)
class OrderSpec:
    expr: Expr
    direction: str = "ASC"
    scalar_agg: str | None = None

    def __post_init__(self) -> None:
        if self.direction not in ("ASC", "DESC"):
            raise ValueError("direction must be ASC or DESC")
        if self.scalar_agg is not None and self.scalar_agg not in SCALAR_AGGS:
            raise ValueError(f"unknown scalar aggregate {self.scalar_agg!r}")


@dataclass(frozen=True)
class QueryPlan:
    """Validated logical form of one statement.

    kind is derived: grouped statements are "aggregation", ungrouped ORDER BY
    is "topk", everything else is "filter".
    """

    kind: str
    select: str
    predicate: Predicate | None = None
    model_id: int | None = None
    mask_types: tuple[int, ...] | None = None
    group_by: str | None = None
    order: OrderSpec | None = None
    limit: int | None = None
    alias: str | None = None


def walk_atoms(expr: Expr) -> Iterator[CpAtom]:
    if isinstance(expr, CpAtom):
        yield expr
    elif isinstance(expr, BinOp):
        yield from walk_atoms(expr.left)
        yield from walk_atoms(expr.right)


def plan_atoms(plan: QueryPlan) -> Iterator[CpAtom]:
    if plan.predicate is not None:
        yield from walk_atoms(plan.predicate.expr)
    if plan.order is not None:
        yield from walk_atoms(plan.order.expr)


def plan_roi_specs(plan: QueryPlan) -> Iterator[RoiSpec]:
    def exprs() -> Iterator[Expr]:
        if plan.predicate is not None:
            yield plan.predicate.expr
        if plan.order is not None:
            yield plan.order.expr

    def walk(expr: Expr) -> Iterator[RoiSpec]:
        if isinstance(expr, (CpAtom, AreaOf)):
            yield expr.roi
        elif isinstance(expr, BinOp):
            yield from walk(expr.left)
            yield from walk(expr.right)

    for e in exprs():
        yield from walk(e)


# --- tokenizer --------------------------------------------------------------

class _Token(NamedTuple):
    kind: str  # IDENT | NUMBER | PUNCT | EOF
    text: str
    value: float | None
    line: int
    col: int


_PUNCT_TWO = ("<=", ">=")
_PUNCT_ONE = "(),;+-*/=<>"


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        start_col = col
        if text.startswith("...", i):
            tokens.append(_Token("PUNCT", "...", None, line, start_col))
            i += 3
            col += 3
            continue
        two = text[i:i + 2]
        if two in _PUNCT_TWO:
            tokens.append(_Token("PUNCT", two, None, line, start_col))
            i += 2
            col += 2
            continue
        if ch in _PUNCT_ONE:
            tokens.append(_Token("PUNCT", ch, None, line, start_col))
            i += 1
            col += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and not text.startswith("...", j):
                j += 1
                if j >= n or not text[j].isdigit():
                    raise ParseError("malformed number", line, start_col)
                while j < n and text[j].isdigit():
                    j += 1
            lexeme = text[i:j]
            tokens.append(_Token("NUMBER", lexeme, float(lexeme), line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("IDENT", text[i:j], None, line, start_col))
            col += j - i
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", line, start_col)
    tokens.append(_Token("EOF", "", None, line, col))
    return tokens


# --- parser -----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str, params: dict | None):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.params = params or {}
        self.alias: str | None = None
        self.alias_expr: Expr | None = None

    # token plumbing

    def peek(self, ahead: int = 0) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def error(self, message: str, tok: _Token | None = None) -> ParseError:
        tok = tok or self.peek()
        return ParseError(message, tok.line, tok.col)

    def at_punct(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "PUNCT" and tok.text == text

    def expect_punct(self, text: str) -> _Token:
        if not self.at_punct(text):
            raise self.error(f"expected {text!r}")
        return self.advance()

    def at_kw(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and tok.text.upper() == word.upper()

    def expect_kw(self, word: str) -> _Token:
        if not self.at_kw(word):
            raise self.error(f"expected {word}")
        return self.advance()

    # parameter binding

    def bind_number(self, name: str, tok: _Token) -> float:
        if name not in self.params:
            raise self.error(f"unbound parameter {name!r}", tok)
        value = self.params[name]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"parameter {name!r} must be a number", tok)
        return float(value)

    def bind_roi(self, name: str, tok: _Token) -> RoiSpec:
        if name not in self.params:
            raise self.error(f"unbound roi parameter {name!r}", tok)
        value = self.params[name]
        if value in ("object", "full_img"):
            return RoiSpec(str(value))
        try:
            (r0, c0), (r1, c1) = value
            return RoiSpec.constant(int(r0), int(c0), int(r1), int(c1))
        except (TypeError, ValueError) as exc:
            raise self.error(
                f"roi parameter {name!r} must be 'object', 'full_img', "
                f"or ((r0, c0), (r1, c1)): {exc}", tok
            ) from None

    def bind_mask_agg(self, tok: _Token) -> MaskAgg:
        if "mask_agg" not in self.params:
            raise self.error(
                "MASK_AGG(mask) needs a 'mask_agg' parameter with the op "
                "(intersect|union) and optional threshold", tok
            )
        value = self.params["mask_agg"]
        if isinstance(value, str):
            value = {"op": value}
        try:
            op = value["op"]
            threshold = float(value.get("threshold", DEFAULT_AGG_THRESHOLD))
            return MaskAgg(op, threshold)
        except (TypeError, KeyError, ValueError) as exc:
            raise self.error(f"bad 'mask_agg' parameter: {exc}", tok) from None

    # scalars and ranges

    def parse_scalar(self) -> float:
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.text == "-":
            self.advance()
            num = self.peek()
            if num.kind != "NUMBER":
                raise self.error("expected number after '-'")
            self.advance()
            return -float(num.value)
        if tok.kind == "NUMBER":
            self.advance()
            return float(tok.value)
        if tok.kind == "IDENT":
            self.advance()
            return self.bind_number(tok.text, tok)
        raise self.error("expected number or parameter name")

    def parse_int(self, what: str) -> int:
        tok = self.peek()
        value = self.parse_scalar()
        if value != int(value):
            raise self.error(f"{what} must be an integer", tok)
        return int(value)

    def parse_range(self) -> ValueRange:
        open_tok = self.expect_punct("(")
        lv = self.parse_scalar()
        self.expect_punct(",")
        uv = self.parse_scalar()
        self.expect_punct(")")
        try:
            return ValueRange(lv, uv)
        except ValueError as exc:
            raise self.error(f"malformed range: {exc}", open_tok) from None

    def parse_roi_spec(self) -> RoiSpec:
        tok = self.peek()
        if tok.kind == "IDENT":
            self.advance()
            low = tok.text.lower()
            if low == "object":
                return RoiSpec("object")
            if low == "full_img":
                return RoiSpec("full_img")
            return self.bind_roi(tok.text, tok)
        if self.at_punct("("):
            self.advance()
            self.expect_punct("(")
            r0 = self.parse_int("roi coordinate")
            self.expect_punct(",")
            c0 = self.parse_int("roi coordinate")
            self.expect_punct(")")
            self.expect_punct(",")
            self.expect_punct("(")
            r1 = self.parse_int("roi coordinate")
            self.expect_punct(",")
            c1 = self.parse_int("roi coordinate")
            self.expect_punct(")")
            self.expect_punct(")")
            try:
                return RoiSpec.constant(r0, c0, r1, c1)
            except ValueError as exc:
                raise self.error(f"bad roi literal: {exc}", tok) from None
        raise self.error("expected roi: object, full_img, ((r0, c0), (r1, c1)), or parameter")

    # expressions

    def parse_cp_call(self) -> CpAtom:
        self.expect_kw("CP")
        self.expect_punct("(")
        agg = self.parse_cp_target()
        self.expect_punct(",")
        roi = self.parse_roi_spec()
        self.expect_punct(",")
        vrange = self.parse_range()
        self.expect_punct(")")
        return CpAtom(roi=roi, vrange=vrange, agg=agg)

    def parse_cp_target(self) -> MaskAgg | None:
        tok = self.peek()
        if tok.kind != "IDENT":
            raise self.error("expected mask, MASK_AGG(mask), or intersect/union(mask > t)")
        word = tok.text.lower()
        if word == "mask":
            self.advance()
            return None
        if word == "mask_agg":
            self.advance()
            self.expect_punct("(")
            self.expect_kw("mask")
            self.expect_punct(")")
            return self.bind_mask_agg(tok)
        if word in MASK_AGG_OPS:
            self.advance()
            self.expect_punct("(")
            self.expect_kw("mask")
            self.expect_punct(">")
            threshold_tok = self.peek()
            threshold = self.parse_scalar()
            self.expect_punct(")")
            try:
                return MaskAgg(word, threshold)
            except ValueError as exc:
                raise self.error(str(exc), threshold_tok) from None
        raise self.error(f"unknown function or target {tok.text!r}", tok)

    def parse_expr(self) -> Expr:
        expr = self.parse_term()
        while self.peek().kind == "PUNCT" and self.peek().text in ("+", "-"):
            op = self.advance().text
            expr = BinOp(op, expr, self.parse_term())
        return expr

    def parse_term(self) -> Expr:
        expr = self.parse_factor()
        while self.peek().kind == "PUNCT" and self.peek().text in ("*", "/"):
            op = self.advance().text
            expr = BinOp(op, expr, self.parse_factor())
        return expr

    def parse_factor(self) -> Expr:
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.text == "-":
            self.advance()
            num = self.peek()
            if num.kind != "NUMBER":
                raise self.error("expected number after '-'")
            self.advance()
            return Const(-float(num.value))
        if tok.kind == "NUMBER":
            self.advance()
            return Const(float(tok.value))
        if self.at_punct("("):
            self.advance()
            expr = self.parse_expr()
            self.expect_punct(")")
            return expr
        if tok.kind == "IDENT":
            word = tok.text.upper()
            if word == "CP":
                return self.parse_cp_call()
            if word == "AREA":
                self.advance()
                self.expect_punct("(")
                roi = self.parse_roi_spec()
                self.expect_punct(")")
                return AreaOf(roi)
            self.advance()
            return Const(self.bind_number(tok.text, tok))
        raise self.error("expected expression")

    # clauses

    def parse_in_list(self) -> tuple[int, ...]:
        self.expect_punct("(")
        items: list[int | None] = []  # None marks an ellipsis
        while True:
            if self.at_punct("..."):
                tok = self.advance()
                if len(items) < 2 or items[-1] is None or items[-2] is None:
                    raise self.error("'...' needs two preceding values", tok)
                items.append(None)
            else:
                items.append(self.parse_int("IN-list value"))
            if self.at_punct(","):
                self.advance()
                continue
            break
        close = self.peek()
        self.expect_punct(")")
        return self.expand_in_list(items, close)

    def expand_in_list(self, items: list[int | None], tok: _Token) -> tuple[int, ...]:
        out: list[int] = []
        i = 0
        while i < len(items):
            item = items[i]
            if item is not None:
                out.append(item)
                i += 1
                continue
            if i + 1 >= len(items) or items[i + 1] is None:
                raise self.error("'...' needs a following value", tok)
            end = items[i + 1]
            prev, step = out[-1], out[-1] - out[-2]
            if step <= 0 or end <= prev or (end - prev) % step != 0:
                raise self.error(
                    f"cannot continue sequence ..., {out[-2]}, {prev}, ..., {end}", tok
                )
            out.extend(range(prev + step, end + 1, step))
            i += 2
        if len(set(out)) != len(out):
            raise self.error("duplicate values in IN list", tok)
        return tuple(out)

    def parse_statement(self) -> QueryPlan:
        self.expect_kw("SELECT")
        select_tok = self.peek()
        if select_tok.kind != "IDENT" or select_tok.text.lower() not in KEY_COLUMNS:
            raise self.error("expected mask_id or image_id")
        select = self.advance().text.lower()
        if self.at_punct(","):
            self.advance()
            self.alias_expr = self.parse_expr()
            self.expect_kw("AS")
            alias_tok = self.peek()
            if alias_tok.kind != "IDENT":
                raise self.error("expected alias name")
            self.alias = self.advance().text
        self.expect_kw("FROM")
        table = self.peek()
        if table.kind != "IDENT" or table.text.lower() != TABLE_NAME.lower():
            raise self.error(f"expected table {TABLE_NAME}")
        self.advance()

        predicate: Predicate | None = None
        model_id: int | None = None
        mask_types: tuple[int, ...] | None = None
        if self.at_kw("WHERE"):
            self.advance()
            while True:
                tok = self.peek()
                if tok.kind == "IDENT" and tok.text.lower() == "model_id":
                    if model_id is not None:
                        raise self.error("duplicate model_id constraint", tok)
                    self.advance()
                    self.expect_punct("=")
                    model_id = self.parse_int("model_id")
                elif tok.kind == "IDENT" and tok.text.lower() == "mask_type":
                    if mask_types is not None:
                        raise self.error("duplicate mask_type constraint", tok)
                    self.advance()
                    self.expect_kw("IN")
                    mask_types = self.parse_in_list()
                    if not mask_types:
                        raise self.error("empty mask_type list", tok)
                else:
                    if predicate is not None:
                        raise self.error("only one pixel-count predicate is allowed", tok)
                    expr = self.parse_expr()
                    cmp_tok = self.peek()
                    if cmp_tok.kind != "PUNCT" or cmp_tok.text not in COMPARATORS:
                        raise self.error("expected comparator <, <=, >, or >=")
                    self.advance()
                    threshold = self.parse_scalar()
                    predicate = Predicate(expr, cmp_tok.text, threshold)
                if self.at_kw("AND"):
                    self.advance()
                    continue
                break

        group_by: str | None = None
        if self.at_kw("GROUP"):
            self.advance()
            self.expect_kw("BY")
            tok = self.peek()
            if tok.kind != "IDENT" or tok.text.lower() != "image_id":
                raise self.error("can only GROUP BY image_id")
            self.advance()
            group_by = "image_id"
            if select != "image_id":
                raise self.error("GROUP BY image_id requires SELECT image_id", tok)

        order: OrderSpec | None = None
        if self.at_kw("ORDER"):
            self.advance()
            self.expect_kw("BY")
            order = self.parse_order_spec()

        limit: int | None = None
        if self.at_kw("LIMIT"):
            self.advance()
            tok = self.peek()
            limit = self.parse_int("LIMIT")
            if limit <= 0:
                raise self.error("LIMIT must be positive", tok)

        if self.at_punct(";"):
            self.advance()
        if self.peek().kind != "EOF":
            raise self.error("unexpected trailing input")

        if self.alias is not None and (order is None or order.expr is not self.alias_expr):
            raise self.error("the aliased select expression must be used in ORDER BY")
        if group_by is None and select == "image_id":
            raise self.error("SELECT image_id requires GROUP BY image_id")

        kind = "aggregation" if group_by else ("topk" if order else "filter")
        return QueryPlan(
            kind=kind,
            select=select,
            predicate=predicate,
            model_id=model_id,
            mask_types=mask_types,
            group_by=group_by,
            order=order,
            limit=limit,
            alias=self.alias,
        )

    def parse_order_spec(self) -> OrderSpec:
        tok = self.peek()
        scalar_agg: str | None = None
        if tok.kind == "IDENT" and tok.text.upper() in SCALAR_AGGS \
                and self.peek(1).kind == "PUNCT" and self.peek(1).text == "(":
            scalar_agg = self.advance().text.upper()
            self.expect_punct("(")
            expr = self.parse_expr()
            self.expect_punct(")")
        elif tok.kind == "IDENT" and self.alias is not None and tok.text == self.alias:
            self.advance()
            expr = self.alias_expr
        else:
            expr = self.parse_expr()
        direction = "ASC"
        if self.at_kw("ASC"):
            self.advance()
        elif self.at_kw("DESC"):
            self.advance()
            direction = "DESC"
        return OrderSpec(expr, direction, scalar_agg)


def parse(sql: str, params: dict | None = None) -> QueryPlan:
    """Parse one statement; bare identifiers are bound from `params`."""
    return _Parser(sql, params).parse_statement()


# --- rendering --------------------------------------------------------------

def _fmt_float(x: float) -> str:
    """Range endpoints and mask thresholds keep a decimal point: 1.0, 0.8."""
    return repr(float(x))


def _fmt_scalar(x: float) -> str:
    """Free-standing numbers drop the decimal point when integral: 5000."""
    fx = float(x)
    return str(int(fx)) if fx.is_integer() else repr(fx)


def _render_roi(roi: RoiSpec) -> str:
    if roi.kind == "constant":
        r = roi.rect
        return f"(({r.r0}, {r.c0}), ({r.r1}, {r.c1}))"
    return roi.kind


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def _render_expr(expr: Expr, parent_prec: int = 0, right_side: bool = False) -> str:
    if isinstance(expr, Const):
        return _fmt_scalar(expr.value)
    if isinstance(expr, AreaOf):
        return f"AREA({_render_roi(expr.roi)})"
    if isinstance(expr, CpAtom):
        if expr.agg is None:
            target = "mask"
        else:
            target = f"{expr.agg.op}(mask > {_fmt_float(expr.agg.threshold)})"
        vr = f"({_fmt_float(expr.vrange.lv)}, {_fmt_float(expr.vrange.uv)})"
        return f"CP({target}, {_render_roi(expr.roi)}, {vr})"
    prec = _PRECEDENCE[expr.op]
    left = _render_expr(expr.left, prec, right_side=False)
    right = _render_expr(expr.right, prec, right_side=True)
    text = f"{left} {expr.op} {right}"
    if prec < parent_prec or (prec == parent_prec and right_side):
        return f"({text})"
    return text


def render(plan: QueryPlan) -> str:
    """Canonical text: parse(render(plan)) == plan, stable across runs."""
    parts = [f"SELECT {plan.select}"]
    if plan.alias is not None:
        parts[0] += f", {_render_expr(plan.order.expr)} AS {plan.alias}"
    parts.append(f"FROM {TABLE_NAME}")
    conjuncts = []
    if plan.predicate is not None:
        p = plan.predicate
        conjuncts.append(f"{_render_expr(p.expr)} {p.cmp} {_fmt_scalar(p.threshold)}")
    if plan.model_id is not None:
        conjuncts.append(f"model_id = {plan.model_id}")
    if plan.mask_types is not None:
        conjuncts.append(f"mask_type IN ({', '.join(str(t) for t in plan.mask_types)})")
    if conjuncts:
        parts.append("WHERE " + " AND ".join(conjuncts))
    if plan.group_by is not None:
        parts.append(f"GROUP BY {plan.group_by}")
    if plan.order is not None:
        if plan.alias is not None:
            body = plan.alias
        elif plan.order.scalar_agg is not None:
            body = f"{plan.order.scalar_agg}({_render_expr(plan.order.expr)})"
        else:
            body = _render_expr(plan.order.expr)
        parts.append(f"ORDER BY {body} {plan.order.direction}")
    if plan.limit is not None:
        parts.append(f"LIMIT {plan.limit}")
    return " ".join(parts)


# --- validation -------------------------------------------------------------

def candidate_masks(plan: QueryPlan, catalog: Catalog) -> list:
    """Mask records passing the plan's metadata constraints, ordered by id."""
    out = []
    for mask_id in catalog.mask_ids():
        rec = catalog.masks[mask_id]
        if plan.model_id is not None and rec.model_id != plan.model_id:
            continue
        if plan.mask_types is not None and rec.mask_type not in plan.mask_types:
            continue
        out.append(rec)
    return out


def validate(plan: QueryPlan, catalog: Catalog, dims_of=None) -> QueryPlan:
    """Check the plan against a catalog; returns the plan unchanged.

    dims_of: optional callable mask_id -> (height, width), used to check
    constant ROIs against mask dimensions (file headers only, no payloads).
    """
    problems: list[str] = []
    atoms = list(plan_atoms(plan))
    uses_agg = any(a.agg is not None for a in atoms)

    if plan.kind == "filter" and plan.predicate is None and plan.model_id is None \
            and plan.mask_types is None:
        pass  # plain scan of the table is fine
    if plan.kind == "topk" and plan.order is None:
        problems.append("top-k plan needs ORDER BY")
    if plan.kind == "aggregation" and plan.group_by is None:
        problems.append("aggregation plan needs GROUP BY")

    if plan.group_by is None:
        if uses_agg:
            problems.append("MASK_AGG/intersect/union requires GROUP BY image_id")
        if plan.order is not None and plan.order.scalar_agg is not None:
            problems.append("scalar aggregates require GROUP BY image_id")
    else:
        if plan.order is not None and plan.order.scalar_agg is None:
            for atom in walk_atoms(plan.order.expr):
                if atom.agg is None:
                    problems.append(
                        "grouped ORDER BY must aggregate: wrap CP in SUM/AVG/MIN/MAX "
                        "or use MASK_AGG/intersect/union"
                    )
                    break
        if plan.order is not None and plan.order.scalar_agg is not None:
            if any(a.agg is not None for a in walk_atoms(plan.order.expr)):
                problems.append("MASK_AGG cannot appear inside a scalar aggregate")
        if plan.predicate is not None:
            for atom in walk_atoms(plan.predicate.expr):
                if atom.agg is None:
                    problems.append("grouped predicates must use MASK_AGG/intersect/union")
                    break
        if plan.order is None and plan.predicate is None:
            problems.append("grouped plan needs a predicate or ORDER BY")

    if uses_agg and not plan.mask_types:
        problems.append("MASK_AGG requires a non-empty mask_type IN (...) list")

    candidates = candidate_masks(plan, catalog)
    specs = list(plan_roi_specs(plan))
    if any(s.kind == "object" for s in specs):
        missing = sorted({
            rec.image_id for rec in candidates
            if catalog.images.get(rec.image_id) is None
            or catalog.images[rec.image_id].object_roi is None
        })
        if missing:
            problems.append(f"roi 'object' unresolvable for image_ids {missing}")
    constant_rects = {s.rect.as_tuple(): s.rect for s in specs if s.kind == "constant"}
    if constant_rects and dims_of is not None:
        for rect in constant_rects.values():
            for rec in candidates:
                h, w = dims_of(rec.mask_id)
                try:
                    rect.validate_for(h, w)
                except ValueError:
                    problems.append(
                        f"roi {rect.as_tuple()} exceeds mask {rec.mask_id} ({h}x{w})"
                    )
                    break

    if problems:
        raise ValidationError("; ".join(problems))
    return plan
