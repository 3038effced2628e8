"""Reading and writing tabular POMDP models.

Two formats are supported:

* the community plain-text format (``.pomdp``): ``states`` / ``actions`` /
  ``observations`` declarations (count or name list), a ``start`` belief,
  and ``T:`` / ``O:`` / ``R:`` entries in scalar, row, and matrix forms with
  ``*`` wildcards and the ``uniform`` / ``identity`` keywords.  ``#`` begins
  a comment.  The grammar is newline-insensitive: numeric payloads are
  consumed by count.  A ``discount`` directive is accepted and ignored with
  a warning, since the library is strictly finite-horizon and the horizon
  belongs to the solver configuration, not the model.
* a native self-describing JSON document carrying dimensions, flat tables
  and labels, which round-trips models losslessly.

Reward entries in the text format may depend on ``(a, s, s', o)``; they are
contracted to the ``R(s, a)`` signature used by the solver by taking the
expectation over ``(s', o)`` under the model's own dynamics.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .model import ModelLabels, PomdpModel, validate_model

ROW_SUM_TOL = 1e-6

_TOKEN_RE = re.compile(r"[^\s:#]+|:")
_DIRECTIVES = {"discount", "values", "states", "actions", "observations", "start", "T", "O", "R"}


class PomdpParseError(ValueError):
    """Parse failure with the position of the offending token."""

    def __init__(self, message: str, line: int, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {message}")


class PomdpFormatWarning(UserWarning):
    """Non-fatal issue in a model document (ignored directive, etc.)."""


@dataclass
class ModelSource:
    """A model document plus a tag saying where it came from."""

    text: str
    origin: str = "<inline>"


@dataclass
class _Token:
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        for m in _TOKEN_RE.finditer(body):
            tokens.append(_Token(m.group(0), lineno, m.start() + 1))
    return tokens


def _is_float(tok: str) -> bool:
    try:
        v = float(tok)
    except ValueError:
        return False
    return not (np.isnan(v) or np.isinf(v))


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.names: dict[str, list[str]] = {}
        self.counts: dict[str, int] = {}
        self.t_table: np.ndarray | None = None
        self.o_table: np.ndarray | None = None
        self.r_sa: np.ndarray | None = None
        self.r_full: np.ndarray | None = None  # allocated only for (s', o)-dependent rewards
        self.start: np.ndarray | None = None
        self.last_line = self.tokens[-1].line if self.tokens else 1

    # token cursor -------------------------------------------------------

    def _peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _peek2(self) -> _Token | None:
        return self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None

    def _next(self, what: str) -> _Token:
        tok = self._peek()
        if tok is None:
            raise PomdpParseError(f"unexpected end of input, expected {what}", self.last_line)
        self.pos += 1
        return tok

    def _expect_colon(self, after: str) -> None:
        tok = self._next(f"':' after '{after}'")
        if tok.text != ":":
            raise PomdpParseError(f"expected ':' after '{after}', got '{tok.text}'",
                                  tok.line, tok.column)

    def _at_directive(self) -> bool:
        tok, nxt = self._peek(), self._peek2()
        if tok is None or tok.text not in _DIRECTIVES:
            return False
        if nxt is not None and nxt.text == ":":
            return True
        return tok.text == "start" and nxt is not None and nxt.text in ("include", "exclude")

    def _read_float(self, what: str) -> float:
        tok = self._next(what)
        if not _is_float(tok.text):
            raise PomdpParseError(f"expected {what}, got '{tok.text}'", tok.line, tok.column)
        return float(tok.text)

    def _read_floats(self, n: int, what: str) -> np.ndarray:
        return np.array([self._read_float(what) for _ in range(n)])

    # index resolution ---------------------------------------------------

    def _resolve(self, tok: _Token, kind: str) -> list[int]:
        """Map a name, integer index, or '*' to concrete indices."""
        count = self.counts[kind]
        if tok.text == "*":
            return list(range(count))
        names = self.names[kind]
        if tok.text in names:
            return [names.index(tok.text)]
        if re.fullmatch(r"\d+", tok.text):
            idx = int(tok.text)
            if idx < count:
                return [idx]
        raise PomdpParseError(f"'{tok.text}' is not a declared {kind[:-1]}", tok.line, tok.column)

    def _read_index_field(self, kind: str) -> list[int]:
        return self._resolve(self._next(f"{kind[:-1]} name, index, or '*'"), kind)

    # directives ---------------------------------------------------------

    def _parse_declaration(self, kind: str) -> None:
        tok = self._next(f"{kind} count or name list")
        if re.fullmatch(r"\d+", tok.text) and (self._at_directive() or self._peek() is None):
            count = int(tok.text)
            if count < 1:
                raise PomdpParseError(f"{kind} count must be positive", tok.line, tok.column)
            self.counts[kind] = count
            self.names[kind] = [str(i) for i in range(count)]
            return
        names = [tok.text]
        while not self._at_directive() and self._peek() is not None:
            names.append(self._next("name").text)
        if len(set(names)) != len(names):
            raise PomdpParseError(f"duplicate {kind[:-1]} name", tok.line, tok.column)
        self.counts[kind] = len(names)
        self.names[kind] = names

    def _require_tables(self, tok: _Token) -> None:
        if self.t_table is not None:
            return
        missing = [k for k in ("states", "actions", "observations") if k not in self.counts]
        if missing:
            raise PomdpParseError(
                f"table entry before {missing[0]} declaration", tok.line, tok.column)
        s, a, o = self.counts["states"], self.counts["actions"], self.counts["observations"]
        self.t_table = np.zeros((a, s, s))
        self.o_table = np.zeros((a, s, o))
        self.r_sa = np.zeros((a, s))

    def _parse_start(self) -> None:
        tok = self._peek()
        kw = tok.text if tok is not None else ""
        if kw in ("include", "exclude"):
            self.pos += 1
            self._expect_colon(f"start {kw}")
            chosen: list[int] = []
            while self._peek() is not None and not self._at_directive():
                chosen.extend(self._read_index_field("states"))
            if not chosen:
                raise PomdpParseError("empty state list after start " + kw, self.last_line)
            n = self.counts["states"]
            mask = np.zeros(n, dtype=bool)
            mask[chosen] = True
            if kw == "exclude":
                mask = ~mask
            if not mask.any():
                raise PomdpParseError("start exclude leaves no states", self.last_line)
            self.start = mask / mask.sum()
            return
        self._expect_colon("start")
        tok = self._peek()
        if tok is None:
            raise PomdpParseError("missing start belief", self.last_line)
        if tok.text == "uniform":
            self.pos += 1
            n = self.counts["states"]
            self.start = np.full(n, 1.0 / n)
        elif _is_float(tok.text):
            self.start = self._read_floats(self.counts["states"], "start probability")
        else:
            idx = self._read_index_field("states")
            if len(idx) != 1:
                raise PomdpParseError("start state must be a single state", tok.line, tok.column)
            self.start = np.zeros(self.counts["states"])
            self.start[idx[0]] = 1.0

    def _parse_matrix_payload(self, rows: int, cols: int, allow_identity: bool,
                              what: str) -> np.ndarray:
        tok = self._peek()
        if tok is not None and tok.text == "uniform":
            self.pos += 1
            return np.full((rows, cols), 1.0 / cols)
        if tok is not None and tok.text == "identity":
            if not allow_identity or rows != cols:
                raise PomdpParseError(
                    f"'identity' not valid for a {rows}x{cols} {what} table",
                    tok.line, tok.column)
            self.pos += 1
            return np.eye(rows)
        return self._read_floats(rows * cols, f"{what} probability").reshape(rows, cols)

    def _parse_row_payload(self, cols: int, what: str) -> np.ndarray:
        tok = self._peek()
        if tok is not None and tok.text == "uniform":
            self.pos += 1
            return np.full(cols, 1.0 / cols)
        return self._read_floats(cols, f"{what} probability")

    def _parse_prob_table(self, table: np.ndarray, row_kind: str, col_kind: str,
                          what: str, allow_identity: bool) -> None:
        """Shared grammar for T: and O: entries."""
        acts = self._read_index_field("actions")
        if self._peek() is not None and self._peek().text == ":":
            self.pos += 1
            rows = self._read_index_field(row_kind)
            if self._peek() is not None and self._peek().text == ":":
                self.pos += 1
                cols = self._read_index_field(col_kind)
                value = self._read_float(f"{what} probability")
                for a in acts:
                    for r in rows:
                        table[np.ix_([a], [r], cols)] = value
            else:
                row = self._parse_row_payload(table.shape[2], what)
                for a in acts:
                    table[a, rows, :] = row
        else:
            mat = self._parse_matrix_payload(table.shape[1], table.shape[2],
                                             allow_identity, what)
            table[acts, :, :] = mat

    def _reward_target(self, need_full: bool) -> None:
        if need_full and self.r_full is None:
            a, s = self.r_sa.shape
            o = self.counts["observations"]
            self.r_full = np.broadcast_to(
                self.r_sa[:, :, None, None], (a, s, s, o)).copy()

    def _parse_reward(self) -> None:
        acts = self._read_index_field("actions")
        self._expect_colon("action field")
        ss = self._read_index_field("states")
        if self._peek() is not None and self._peek().text == ":":
            self.pos += 1
            nxt = self._read_index_field("states")
            full_nxt = len(nxt) == self.counts["states"]
            if self._peek() is not None and self._peek().text == ":":
                self.pos += 1
                obs = self._read_index_field("observations")
                value = self._read_float("reward value")
                if full_nxt and len(obs) == self.counts["observations"]:
                    # independent of (s', o): assign R(s, a) directly
                    for a in acts:
                        self.r_sa[a, ss] = value
                    if self.r_full is not None:
                        for a in acts:
                            self.r_full[np.ix_([a], ss, nxt, obs)] = value
                else:
                    self._reward_target(need_full=True)
                    for a in acts:
                        self.r_full[np.ix_([a], ss, nxt, obs)] = value
            else:
                row = self._read_floats(self.counts["observations"], "reward value")
                self._reward_target(need_full=True)
                for a in acts:
                    self.r_full[np.ix_([a], ss, nxt)] = row
        else:
            n_s = self.counts["states"]
            n_o = self.counts["observations"]
            mat = self._read_floats(n_s * n_o, "reward value").reshape(n_s, n_o)
            self._reward_target(need_full=True)
            for a in acts:
                self.r_full[a, ss, :, :] = mat

    # driver -------------------------------------------------------------

    def parse(self) -> PomdpModel:
        while (tok := self._peek()) is not None:
            self.pos += 1
            kw = tok.text
            if kw not in _DIRECTIVES:
                raise PomdpParseError(f"unknown directive '{kw}'", tok.line, tok.column)
            if kw == "discount":
                self._expect_colon(kw)
                value = self._read_float("discount value")
                warnings.warn(PomdpFormatWarning(
                    f"discount directive ({value}) ignored: models are finite-horizon,"
                    " set the horizon on the solver"), stacklevel=3)
            elif kw == "values":
                self._expect_colon(kw)
                mode = self._next("'reward' or 'cost'")
                if mode.text == "cost":
                    warnings.warn(PomdpFormatWarning(
                        "values: cost is not supported, entries are read as rewards"),
                        stacklevel=3)
                elif mode.text != "reward":
                    raise PomdpParseError(f"values must be 'reward' or 'cost',"
                                          f" got '{mode.text}'", mode.line, mode.column)
            elif kw in ("states", "actions", "observations"):
                self._expect_colon(kw)
                self._parse_declaration(kw)
            elif kw == "start":
                if "states" not in self.counts:
                    raise PomdpParseError("start before states declaration",
                                          tok.line, tok.column)
                self._parse_start()
            elif kw == "T":
                self._expect_colon(kw)
                self._require_tables(tok)
                self._parse_prob_table(self.t_table, "states", "states",
                                       "transition", allow_identity=True)
            elif kw == "O":
                self._expect_colon(kw)
                self._require_tables(tok)
                self._parse_prob_table(self.o_table, "states", "observations",
                                       "observation",
                                       allow_identity=self.counts["states"]
                                       == self.counts["observations"])
            elif kw == "R":
                self._expect_colon(kw)
                self._require_tables(tok)
                self._parse_reward()
        return self._finalize()

    def _finalize(self) -> PomdpModel:
        if self.t_table is None:
            raise PomdpParseError("document declares no tables", self.last_line)
        n_s, n_a, n_o = self.counts["states"], self.counts["actions"], self.counts["observations"]
        a_names, s_names, o_names = (self.names["actions"], self.names["states"],
                                     self.names["observations"])

        for a, s in zip(*np.where(np.abs(self.t_table.sum(axis=2) - 1.0) > ROW_SUM_TOL)):
            raise PomdpParseError(
                f"transition row T[{a_names[a]}][{s_names[s]}] sums to"
                f" {self.t_table[a, s].sum()!r}, expected 1", self.last_line)
        for a, s2 in zip(*np.where(np.abs(self.o_table.sum(axis=2) - 1.0) > ROW_SUM_TOL)):
            raise PomdpParseError(
                f"observation row O[{a_names[a]}][{s_names[s2]}] sums to"
                f" {self.o_table[a, s2].sum()!r}, expected 1", self.last_line)

        if self.start is None:
            self.start = np.full(n_s, 1.0 / n_s)
        if np.any(self.start < 0) or abs(self.start.sum() - 1.0) > ROW_SUM_TOL:
            raise PomdpParseError(
                f"start belief sums to {self.start.sum()!r}, expected 1", self.last_line)

        transition = self.t_table / self.t_table.sum(axis=2, keepdims=True)
        observation = self.o_table / self.o_table.sum(axis=2, keepdims=True)
        if self.r_full is not None:
            # E[R(s,a,s',o)] over s' ~ T, o ~ O
            reward = np.einsum("asn,ano,asno->as", transition, observation, self.r_full)
        else:
            reward = self.r_sa
        model = PomdpModel(
            num_states=n_s, num_actions=n_a, num_observations=n_o,
            transition=transition, observation=observation, reward=reward,
            initial_belief=self.start / self.start.sum(),
            labels=ModelLabels(states=s_names, actions=a_names, observations=o_names),
        )
        problems = validate_model(model)
        if problems:
            raise PomdpParseError("model invalid after parse: " + "; ".join(problems),
                                  self.last_line)
        return model


def parse_pomdp_text(source: str | ModelSource) -> PomdpModel:
    """Parse a plain-text POMDP document into a validated model.

    Raises PomdpParseError with the position of the defect on any syntax
    error, undeclared name, dimension mismatch, or row whose probabilities
    do not sum to one within 1e-6.  Rows are renormalized exactly after
    validation, so text rounding noise does not reach the solver.
    """
    text = source.text if isinstance(source, ModelSource) else source
    if not text.strip():
        raise PomdpParseError("empty document", 1)
    return _Parser(text).parse()


def parse_pomdp_file(path) -> PomdpModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_pomdp_text(ModelSource(fh.read(), origin=str(path)))


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_model(model: PomdpModel) -> ModelSource:
    """Render a model as a plain-text document that parses back to it.

    Floats are written with full precision; re-parsing reproduces every
    table entry to within renormalization noise (well under 1e-12).
    """
    s_names = [model.state_name(s) for s in range(model.num_states)]
    a_names = [model.action_name(a) for a in range(model.num_actions)]
    o_names = [model.observation_name(o) for o in range(model.num_observations)]
    out = [
        "states: " + " ".join(s_names),
        "actions: " + " ".join(a_names),
        "observations: " + " ".join(o_names),
        "",
        "start: " + " ".join(_fmt(p) for p in model.initial_belief),
    ]
    for a, name in enumerate(a_names):
        out.append("")
        out.append(f"T: {name}")
        for s in range(model.num_states):
            out.append(" ".join(_fmt(p) for p in model.transition[a, s]))
    for a, name in enumerate(a_names):
        out.append("")
        out.append(f"O: {name}")
        for s2 in range(model.num_states):
            out.append(" ".join(_fmt(p) for p in model.observation[a, s2]))
    out.append("")
    for a, name in enumerate(a_names):
        for s in range(model.num_states):
            r = model.reward[a, s]
            if r != 0.0:
                out.append(f"R: {name} : {s_names[s]} : * : * {_fmt(r)}")
    return ModelSource("\n".join(out) + "\n", origin="<serialized>")


# native JSON format -------------------------------------------------------

def model_to_json(model: PomdpModel) -> str:
    """Lossless self-describing JSON document for a model."""
    doc = {
        "format": "pomdp-model",
        "version": 1,
        "num_states": model.num_states,
        "num_actions": model.num_actions,
        "num_observations": model.num_observations,
        "transition": model.transition.ravel().tolist(),
        "observation": model.observation.ravel().tolist(),
        "reward": model.reward.ravel().tolist(),
        "initial_belief": model.initial_belief.tolist(),
        "labels": {
            "states": model.labels.states,
            "actions": model.labels.actions,
            "observations": model.labels.observations,
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def model_from_json(text: str) -> PomdpModel:
    doc = json.loads(text)
    if doc.get("format") != "pomdp-model":
        raise ValueError("not a pomdp-model document")
    s, a, o = doc["num_states"], doc["num_actions"], doc["num_observations"]
    labels = doc.get("labels") or {}
    return PomdpModel(
        num_states=s, num_actions=a, num_observations=o,
        transition=np.array(doc["transition"]).reshape(a, s, s),
        observation=np.array(doc["observation"]).reshape(a, s, o),
        reward=np.array(doc["reward"]).reshape(a, s),
        initial_belief=np.array(doc["initial_belief"]),
        labels=ModelLabels(states=labels.get("states"), actions=labels.get("actions"),
                           observations=labels.get("observations")),
    )


# bundled example models ---------------------------------------------------

def bundled_model_names() -> list[str]:
    data = resources.files("pgi").joinpath("data")
    return sorted(p.name[:-len(".pomdp")] for p in data.iterdir()
                  if p.name.endswith(".pomdp"))


def bundled_model_text(name: str) -> str:
    path = resources.files("pgi").joinpath("data", f"{name}.pomdp")
    if not path.is_file():
        raise FileNotFoundError(
            f"no bundled model '{name}' (available: {', '.join(bundled_model_names())})")
    return path.read_text(encoding="utf-8")


def load_bundled_model(name: str) -> PomdpModel:
    return parse_pomdp_text(ModelSource(bundled_model_text(name), origin=f"<bundled:{name}>"))
