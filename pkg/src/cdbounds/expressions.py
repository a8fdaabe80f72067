"""Tiny arithmetic language for coefficient functions of x, y, t.

Supports +, -, *, /, ^, parentheses, sin, cos, exp, numeric literals and the
variables x, y, t. Parsed expressions evaluate vectorized over numpy arrays
and differentiate symbolically (needed for drift divergences).
"""

import numpy as np

_FUNCS = ("sin", "cos", "exp")
_VARS = ("x", "y", "t")


def _err(msg, offset):
    e = SyntaxError(msg)
    e.offset = offset
    return e


def _tokenize(text):
    toks = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "+-*/^()":
            toks.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            while j < n and (text[j].isdigit() or text[j] in ".eE" or
                             (text[j] in "+-" and j > i and text[j - 1] in "eE")):
                j += 1
            try:
                val = float(text[i:j])
            except ValueError:
                raise _err(f"bad number {text[i:j]!r}", i)
            toks.append(("num", val, i))
            i = j
            continue
        if c.isalpha():
            j = i
            while j < n and text[j].isalnum():
                j += 1
            name = text[i:j]
            if name in _FUNCS:
                toks.append(("func", name, i))
            elif name in _VARS:
                toks.append(("var", name, i))
            else:
                raise _err(f"unknown name {name!r}", i)
            i = j
            continue
        raise _err(f"unexpected character {c!r}", i)
    toks.append(("end", None, n))
    return toks


class _Parser:
    def __init__(self, toks):
        self.toks = toks
        self.k = 0

    def peek(self):
        return self.toks[self.k]

    def take(self):
        t = self.toks[self.k]
        self.k += 1
        return t

    def expect(self, kind):
        t = self.take()
        if t[0] != kind:
            raise _err(f"expected {kind!r}", t[2])
        return t

    def expr(self):
        node = self.term()
        while self.peek()[0] in "+-":
            op = self.take()[0]
            rhs = self.term()
            node = ("add" if op == "+" else "sub", node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] in "*/":
            op = self.take()[0]
            rhs = self.unary()
            node = ("mul" if op == "*" else "div", node, rhs)
        return node

    def unary(self):
        if self.peek()[0] == "-":
            self.take()
            return ("neg", self.unary())
        if self.peek()[0] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "^":
            self.take()
            return ("pow", base, self.unary())
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return ("num", val)
        if kind == "var":
            return ("var", val)
        if kind == "func":
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return (val, arg)
        if kind == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise _err("expected value", pos)


def _eval(node, env):
    op = node[0]
    if op == "num":
        return node[1]
    if op == "var":
        if node[1] not in env:
            raise KeyError(f"variable {node[1]!r} not bound")
        return env[node[1]]
    if op == "neg":
        return -_eval(node[1], env)
    a = _eval(node[1], env)
    if op in ("sin", "cos", "exp"):
        return getattr(np, op)(a)
    b = _eval(node[2], env)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    if op == "pow":
        return a ** b
    raise ValueError(op)


def _diff(node, var):
    op = node[0]
    if op == "num":
        return ("num", 0.0)
    if op == "var":
        return ("num", 1.0 if node[1] == var else 0.0)
    if op == "neg":
        return ("neg", _diff(node[1], var))
    if op == "add" or op == "sub":
        return (op, _diff(node[1], var), _diff(node[2], var))
    if op == "mul":
        a, b = node[1], node[2]
        return ("add", ("mul", _diff(a, var), b), ("mul", a, _diff(b, var)))
    if op == "div":
        a, b = node[1], node[2]
        num = ("sub", ("mul", _diff(a, var), b), ("mul", a, _diff(b, var)))
        return ("div", num, ("mul", b, b))
    if op == "pow":
        a, b = node[1], node[2]
        if b[0] != "num":
            raise ValueError("derivative needs a constant exponent")
        n = b[1]
        return ("mul", ("mul", ("num", n), ("pow", a, ("num", n - 1.0))),
                _diff(a, var))
    if op == "sin":
        return ("mul", ("cos", node[1]), _diff(node[1], var))
    if op == "cos":
        return ("neg", ("mul", ("sin", node[1]), _diff(node[1], var)))
    if op == "exp":
        return ("mul", node, _diff(node[1], var))
    raise ValueError(op)


def _simplify(node):
    op = node[0]
    if op in ("num", "var"):
        return node
    kids = tuple(_simplify(c) for c in node[1:])
    node = (op,) + kids
    if all(k[0] == "num" for k in kids):
        return ("num", float(_eval(node, {})))
    if op == "mul":
        a, b = kids
        if a == ("num", 0.0) or b == ("num", 0.0):
            return ("num", 0.0)
        if a == ("num", 1.0):
            return b
        if b == ("num", 1.0):
            return a
    if op == "add":
        a, b = kids
        if a == ("num", 0.0):
            return b
        if b == ("num", 0.0):
            return a
    if op == "sub" and kids[1] == ("num", 0.0):
        return kids[0]
    if op == "neg" and kids[0][0] == "num":
        return ("num", -kids[0][1])
    return node


class ParsedExpr:
    """Callable coefficient; call with arrays via keywords or a point block."""

    def __init__(self, ast, text=""):
        self.ast = _simplify(ast)
        self.text = text

    def __call__(self, points=None, names=("x", "y"), **env):
        if points is not None:
            pts = np.asarray(points, float)
            for k, name in enumerate(names[: pts.shape[-1]]):
                env[name] = pts[..., k]
        val = _eval(self.ast, env)
        if np.isscalar(val) or np.ndim(val) == 0:
            shape = np.shape(next(iter(env.values()))) if env else ()
            return np.full(shape, float(val)) if shape else float(val)
        return val

    def derivative(self, var):
        return ParsedExpr(_diff(self.ast, var), f"d({self.text})/d{var}")


def parse_coefficient(text):
    toks = _tokenize(text)
    p = _Parser(toks)
    node = p.expr()
    end = p.take()
    if end[0] != "end":
        raise _err("trailing input", end[2])
    return ParsedExpr(node, text)
