"""Frontend for the .stec loop language.

Tokenizer and recursive-descent parser. Pragmas are line-scoped: a `#pragma`
line tokenizes into a single bracketed token stream terminated at the end of
the line, which the parser consumes as one directive. `//` comments run to
end of line. Error messages are formatted `file:line:col: message`.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ir
from .source import (IllegalCharacter, SourceSpan, SteError, UnexpectedToken,
                     UnknownClause, UnterminatedBlock)

KEYWORDS = {"int", "for", "if", "else", "rnd", "input"}

_PUNCT = [
    "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "++", "+=", "-=",
    "(", ")", "[", "]", "{", "}", ";", ",", ":", "=", "<", ">",
    "+", "-", "*", "/", "%", "!", "&", "|", "^", "#",
]


@dataclass(frozen=True)
class Token:
    kind: str  # "ident" | "int" | "kw" | "punct" | "pragma_end" | "eof"
    text: str
    span: SourceSpan


def tokenize(text: str, file: str = "<memory>") -> list[Token]:
    """Scan the whole input; every token carries a span.

    Inside a pragma line a synthetic "pragma_end" token is emitted at the
    newline so the parser can treat the directive as a bounded stream.
    """
    tokens: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    in_pragma = False

    def span(length: int = 1) -> SourceSpan:
        return SourceSpan(file, line, col, length)

    while i < n:
        ch = text[i]
        if ch == "\n":
            if in_pragma:
                tokens.append(Token("pragma_end", "", span(0)))
                in_pragma = False
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "#":
            tokens.append(Token("punct", "#", span()))
            in_pragma = True
            i += 1
            col += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(Token("int", text[i:j], span(j - i)))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "kw" if word in KEYWORDS else "ident"
            tokens.append(Token(kind, word, span(j - i)))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                tokens.append(Token("punct", p, span(len(p))))
                i += len(p)
                col += len(p)
                break
        else:
            raise IllegalCharacter(f"illegal character {ch!r}", span())
    if in_pragma:
        tokens.append(Token("pragma_end", "", span(0)))
    tokens.append(Token("eof", "", span(0)))
    return tokens


class Parser:
    def __init__(self, tokens: list[Token], file: str = "<memory>"):
        self.tokens = tokens
        self.pos = 0
        self.file = file

    # -- token plumbing ----------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def check(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        if self.check(kind, text):
            return self.advance()
        return None

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if not self.check(kind, text):
            want = text if text is not None else kind
            raise UnexpectedToken(
                f"expected {want!r}, found {tok.text or tok.kind!r}", tok.span)
        return self.advance()

    # -- expressions -------------------------------------------------------

    _LEVELS = [
        ("||",), ("&&",), ("|",), ("^",), ("&",), ("==", "!="),
        ("<", "<=", ">", ">="), ("<<", ">>"), ("+", "-"), ("*", "/", "%"),
    ]

    def parse_expr(self, level: int = 0) -> ir.Expr:
        if level == len(self._LEVELS):
            return self.parse_unary()
        lhs = self.parse_expr(level + 1)
        while self.peek().kind == "punct" and \
                self.peek().text in self._LEVELS[level]:
            op = self.advance()
            rhs = self.parse_expr(level + 1)
            lhs = ir.Binary(op.text, lhs, rhs, span=op.span)
        return lhs

    def parse_unary(self) -> ir.Expr:
        tok = self.peek()
        if tok.kind == "punct" and tok.text in ("-", "!"):
            self.advance()
            return ir.Unary(tok.text, self.parse_unary(), span=tok.span)
        return self.parse_primary()

    def parse_primary(self) -> ir.Expr:
        tok = self.peek()
        if tok.kind == "int":
            self.advance()
            return ir.IntLit(int(tok.text), span=tok.span)
        if tok.kind == "kw" and tok.text == "rnd":
            self.advance()
            self.expect("punct", "(")
            arg = self.parse_expr()
            self.expect("punct", ")")
            return ir.Rnd(arg, span=tok.span)
        if tok.kind == "ident":
            self.advance()
            if self.accept("punct", "["):
                idx = self.parse_expr()
                self.expect("punct", "]")
                return ir.Index(tok.text, idx, span=tok.span)
            return ir.VarRef(tok.text, span=tok.span)
        if tok.kind == "punct" and tok.text == "(":
            self.advance()
            e = self.parse_expr()
            self.expect("punct", ")")
            return e
        raise UnexpectedToken(
            f"expected expression, found {tok.text or tok.kind!r}", tok.span)

    # -- declarations ------------------------------------------------------

    def parse_decl(self) -> ir.VarDecl:
        kw = self.expect("kw", "int")
        name = self.expect("ident")
        length = None
        init = None
        init_list = None
        if self.accept("punct", "["):
            length = int(self.expect("int").text)
            self.expect("punct", "]")
        if self.accept("punct", "="):
            if self.check("punct", "{"):
                if length is None:
                    raise UnexpectedToken(
                        "brace initializer requires an array", self.peek().span)
                self.advance()
                values: list[int] = []
                if not self.check("punct", "}"):
                    while True:
                        neg = self.accept("punct", "-") is not None
                        v = int(self.expect("int").text)
                        values.append(-v if neg else v)
                        if not self.accept("punct", ","):
                            break
                self.expect("punct", "}")
                if len(values) > length:
                    raise UnexpectedToken(
                        f"initializer has {len(values)} values for array of "
                        f"length {length}", kw.span)
                init_list = tuple(values)
            else:
                init = self.parse_expr()
        self.expect("punct", ";")
        return ir.VarDecl(name.text, length, init, init_list, span=kw.span)

    # -- simple statements -------------------------------------------------

    def parse_assign_core(self) -> ir.Assign:
        """lvalue = expr | lvalue += expr | lvalue -= expr | lvalue++ (no ';')."""
        name = self.expect("ident")
        index = None
        if self.accept("punct", "["):
            index = self.parse_expr()
            self.expect("punct", "]")
        ref: ir.Expr = ir.VarRef(name.text, span=name.span) if index is None \
            else ir.Index(name.text, index, span=name.span)
        if self.accept("punct", "++"):
            value: ir.Expr = ir.Binary("+", ref, ir.IntLit(1), span=name.span)
        elif self.accept("punct", "+="):
            value = ir.Binary("+", ref, self.parse_expr(), span=name.span)
        elif self.accept("punct", "-="):
            value = ir.Binary("-", ref, self.parse_expr(), span=name.span)
        else:
            self.expect("punct", "=")
            value = self.parse_expr()
        return ir.Assign(name.text, index, value, span=name.span)

    def parse_intrinsic_stmt(self) -> ir.Intrinsic:
        tok = self.peek()
        if tok.text == "__end":
            self.advance()
            self.expect("punct", "(")
            result = self.expect("ident").text
            self.expect("punct", ",")
            cursor = self.expect("ident").text
            self.expect("punct", ",")
            ivar = self.expect("ident").text
            self.expect("punct", ")")
            self.expect("punct", ";")
            return ir.Intrinsic("end", cursor=cursor, result=result,
                                ivar=ivar, span=tok.span)
        if tok.text == "__cursor_init":
            self.advance()
            self.expect("punct", "(")
            cursor = self.expect("ident").text
            self.expect("punct", ",")
            init = self.parse_expr()
            self.expect("punct", ")")
            self.expect("punct", ";")
            return ir.Intrinsic("cursor_init", cursor=cursor, init=init,
                                span=tok.span)
        if tok.text == "__cursor_advance":
            self.advance()
            self.expect("punct", "(")
            cursor = self.expect("ident").text
            self.expect("punct", ",")
            amount = int(self.expect("int").text)
            self.expect("punct", ")")
            self.expect("punct", ";")
            return ir.Intrinsic("cursor_advance", cursor=cursor, amount=amount,
                                span=tok.span)
        raise UnexpectedToken(f"unknown intrinsic {tok.text!r}", tok.span)

    # -- pragmas -------------------------------------------------------------

    def parse_name_list(self) -> tuple[str, ...]:
        self.expect("punct", "(")
        names = [self.expect("ident").text]
        while self.accept("punct", ","):
            names.append(self.expect("ident").text)
        self.expect("punct", ")")
        return tuple(names)

    def parse_pragma(self) -> ir.Stmt | None:
        """Parse one `#pragma ...` line. Returns None for ignored pragmas.

        Directive pragmas (taskloop, for-ordered) are returned as carrier
        objects the statement parser attaches to the following for loop.
        """
        hash_tok = self.expect("punct", "#")
        word = self.expect("ident")
        if word.text != "pragma":
            raise UnexpectedToken("expected 'pragma' after '#'", word.span)
        omp = self.expect("ident")
        if omp.text != "omp":
            raise UnknownClause(f"unknown pragma namespace {omp.text!r}",
                                omp.span)
        head = self.advance()
        if head.kind not in ("ident", "kw"):
            raise UnknownClause("missing pragma directive name", head.span)

        if head.text in ("parallel", "single"):
            # Accepted for source compatibility; carries no semantics here.
            while not self.check("pragma_end"):
                self.advance()
            self.expect("pragma_end")
            return None

        if head.text == "taskloop":
            directive = self.parse_taskloop_clauses(hash_tok.span)
            self.expect("pragma_end")
            return ir.For(directive=directive)  # carrier; body filled later

        if head.text == "tls":
            clause_tok = self.advance()
            if clause_tok.text not in ir.TLS_CLAUSE_KINDS:
                raise UnknownClause(
                    f"unknown tls clause {clause_tok.text!r}", clause_tok.span)
            self.expect("punct", "(")
            target = self.expect("ident").text
            self.expect("punct", ")")
            self.expect("pragma_end")
            return ir.PragmaTls(ir.TlsDirectiveClause(clause_tok.text, target),
                                span=hash_tok.span)

        if head.text == "ordered":
            self.expect("ident")  # depend
            self.expect("punct", "(")
            what = self.expect("ident").text
            if what == "source":
                self.expect("punct", ")")
                self.expect("pragma_end")
                return ir.OrderedMark("source", span=hash_tok.span)
            if what != "sink":
                raise UnknownClause(f"unknown depend kind {what!r}",
                                    hash_tok.span)
            self.expect("punct", ":")
            ivar = self.expect("ident").text
            self.expect("punct", "-")
            distance = int(self.expect("int").text)
            self.expect("punct", ")")
            self.expect("pragma_end")
            if distance < 1:
                raise UnknownClause("sink distance must be >= 1", hash_tok.span)
            return ir.OrderedMark("sink", ivar=ivar, distance=distance,
                                  span=hash_tok.span)

        if head.text == "for":
            # `#pragma omp for ordered[(1)]`
            kw = self.expect("ident")
            if kw.text != "ordered":
                raise UnknownClause(f"unknown for clause {kw.text!r}", kw.span)
            if self.accept("punct", "("):
                self.expect("int")
                self.expect("punct", ")")
            while not self.check("pragma_end"):
                self.advance()
            self.expect("pragma_end")
            marker = ir.For(directive=None)
            marker.ordered = True
            return marker

        raise UnknownClause(f"unknown pragma directive {head.text!r}",
                            head.span)

    def parse_taskloop_clauses(self, span: SourceSpan) -> ir.TaskloopDirective:
        d = ir.TaskloopDirective(span=span)
        while not self.check("pragma_end"):
            clause = self.advance()
            if clause.kind not in ("ident", "kw"):
                raise UnknownClause(
                    f"unexpected token {clause.text!r} in taskloop directive",
                    clause.span)
            if clause.text == "tls":
                self.expect("punct", "(")
                size_tok = self.expect("int")
                self.expect("punct", ")")
                size = int(size_tok.text)
                if size < 1:
                    raise UnexpectedToken("strip_size must be >= 1",
                                          size_tok.span)
                d.strip_size = size
            elif clause.text == "grainsize":
                self.expect("punct", "(")
                size_tok = self.expect("int")
                self.expect("punct", ")")
                size = int(size_tok.text)
                if size < 1:
                    raise UnexpectedToken("grainsize must be >= 1",
                                          size_tok.span)
                d.grainsize = size
            elif clause.text == "spec_private":
                d.spec_private = self.parse_name_list()
            elif clause.text == "firstprivate":
                d.firstprivate = self.parse_name_list()
            elif clause.text == "shared":
                d.shared = self.parse_name_list()
            elif clause.text == "spec_reduction":
                self.expect("punct", "(")
                op_tok = self.advance()
                op = op_tok.text
                if op == "&" and self.accept("punct", "&"):
                    op = "&&"
                if op == "|" and self.accept("punct", "|"):
                    op = "||"
                if op not in ir.REDUCTION_OPS:
                    raise UnknownClause(
                        f"unknown reduction operator {op!r}", op_tok.span)
                self.expect("punct", ":")
                names = [self.expect("ident").text]
                while self.accept("punct", ","):
                    names.append(self.expect("ident").text)
                self.expect("punct", ")")
                d.spec_reduction = ir.SpecReduction(op, tuple(names))
            else:
                raise UnknownClause(
                    f"unknown taskloop clause {clause.text!r}", clause.span)
        return d

    # -- statements ----------------------------------------------------------

    def parse_block(self) -> list[ir.Stmt]:
        open_tok = self.expect("punct", "{")
        stmts: list[ir.Stmt] = []
        while not self.check("punct", "}"):
            if self.check("eof"):
                raise UnterminatedBlock("missing closing '}'", open_tok.span)
            stmts.extend(self.parse_stmt())
        self.expect("punct", "}")
        return stmts

    def parse_body_or_stmt(self) -> list[ir.Stmt]:
        if self.check("punct", "{"):
            return self.parse_block()
        return self.parse_stmt()

    def parse_for(self, directive: ir.TaskloopDirective | None = None,
                  ordered: bool = False) -> ir.For:
        for_tok = self.expect("kw", "for")
        self.expect("punct", "(")
        declares = False
        if self.check("kw", "int"):
            self.advance()
            declares = True
        name = self.expect("ident").text
        self.expect("punct", "=")
        init = self.parse_expr()
        self.expect("punct", ";")
        cond = self.parse_expr()
        self.expect("punct", ";")
        step_assign = self.parse_assign_core()
        if step_assign.target != name or step_assign.index is not None:
            raise UnexpectedToken(
                f"for step must update the induction variable {name!r}",
                for_tok.span)
        self.expect("punct", ")")
        body = self.parse_body_or_stmt()
        return ir.For(name, init, cond, step_assign.value, body,
                      declares_induction=declares, directive=directive,
                      ordered=ordered, span=for_tok.span)

    def parse_stmt(self) -> list[ir.Stmt]:
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "#":
            parsed = self.parse_pragma()
            if parsed is None:
                return []
            if isinstance(parsed, ir.For):
                # Loop directive: attach to the for that must follow,
                # skipping further loop pragmas on adjacent lines.
                directive = parsed.directive
                ordered = parsed.ordered
                while self.check("punct", "#"):
                    more = self.parse_pragma()
                    if more is None:
                        continue
                    if isinstance(more, ir.For):
                        directive = directive or more.directive
                        ordered = ordered or more.ordered
                        continue
                    raise UnexpectedToken(
                        "taskloop directive must be followed by a for loop",
                        tok.span)
                if not self.check("kw", "for"):
                    raise UnexpectedToken(
                        "taskloop directive must be followed by a for loop",
                        self.peek().span)
                return [self.parse_for(directive=directive, ordered=ordered)]
            return [parsed]
        if tok.kind == "kw" and tok.text == "int":
            return [ir.Decl(self.parse_decl())]
        if tok.kind == "kw" and tok.text == "for":
            return [self.parse_for()]
        if tok.kind == "kw" and tok.text == "if":
            self.advance()
            self.expect("punct", "(")
            cond = self.parse_expr()
            self.expect("punct", ")")
            then = self.parse_body_or_stmt()
            orelse: list[ir.Stmt] = []
            if self.check("ident", "else") or self.check("kw", "else"):
                self.advance()
                orelse = self.parse_body_or_stmt()
            return [ir.If(cond, then, orelse, span=tok.span)]
        if tok.kind == "ident" and tok.text.startswith("__"):
            return [self.parse_intrinsic_stmt()]
        if tok.kind == "ident":
            if self.peek(1).kind == "punct" and self.peek(1).text == "=" and \
                    self.peek(2).kind == "ident" and \
                    self.peek(2).text == "__begin":
                result = self.advance().text
                self.advance()  # '='
                begin_tok = self.advance()
                self.expect("punct", "(")
                cursor = self.expect("ident").text
                self.expect("punct", ",")
                ivar = self.expect("ident").text
                self.expect("punct", ")")
                self.expect("punct", ";")
                return [ir.Intrinsic("begin", cursor=cursor, result=result,
                                     ivar=ivar, span=begin_tok.span)]
            assign = self.parse_assign_core()
            self.expect("punct", ";")
            return [assign]
        raise UnexpectedToken(
            f"expected statement, found {tok.text or tok.kind!r}", tok.span)

    def parse_program(self) -> ir.Program:
        globals_: list[ir.VarDecl] = []
        body: list[ir.Stmt] = []
        while not self.check("eof"):
            if self.check("kw", "int") and not body:
                globals_.append(self.parse_decl())
            else:
                body.extend(self.parse_stmt())
        return ir.Program(globals_, body, source_file=self.file)


def parse(text: str, file: str = "<memory>") -> ir.Program:
    """Parse .stec source text into a Program; raises SteError on failure."""
    return Parser(tokenize(text, file), file).parse_program()


def parse_file(path: str) -> ir.Program:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read(), file=path)


def format_error(err: SteError) -> str:
    return f"{err.span}: {err.message}"
