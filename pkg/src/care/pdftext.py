"""Minimal PDF text extraction: per-page text in content-stream order.

Parses the object graph directly (no xref needed), walks the page tree,
and interprets the text-showing operators (Tj, TJ, ', ") of each page's
content streams. Supports unfiltered, FlateDecode and ASCII85Decode
streams, including filter chains, which covers the common
single-byte-font PDFs this platform stores.

Known limitations, by design: CID/multi-byte fonts are not mapped (their
text may come out garbled), inline images are ignored, and ObjStm-packed
objects (PDF 1.5 cross-reference streams) are not unpacked. The emitted
order is the content-stream order and is treated as ground truth by the
anchoring layer.
"""

from __future__ import annotations

import base64
import re
import zlib

_HEADER_RE = re.compile(rb"%PDF-\d\.\d")
_OBJ_RE = re.compile(rb"(\d+)\s+(\d+)\s+obj\b")
_REF_RE = re.compile(rb"(\d+)\s+(\d+)\s+R\b")
_LENGTH_RE = re.compile(rb"/Length\s+(\d+)\b")
_LENGTH_REF_RE = re.compile(rb"/Length\s+(\d+)\s+(\d+)\s+R\b")
_FILTER_RE = re.compile(rb"/Filter\s*(\[[^\]]*\]|/\w+)")
_NAME_RE = re.compile(rb"/(\w+)")


class PdfError(ValueError):
    """The input is not a PDF this extractor can read."""


class _Object:
    __slots__ = ("body", "stream")

    def __init__(self, body: bytes, stream: bytes | None):
        self.body = body
        self.stream = stream


def extract_text_pages(pdf_bytes: bytes) -> list[str]:
    """Extract one text string per page, in page-tree order.

    Raises PdfError for data that is not a readable PDF. Pages without
    text operators yield empty strings; calling code decides whether an
    all-empty layer disables anchoring.
    """
    if not _HEADER_RE.search(pdf_bytes[:1024]):
        raise PdfError("missing %PDF header")
    objects = _scan_objects(pdf_bytes)
    if not objects:
        raise PdfError("no objects found")
    if re.search(rb"/Encrypt\b", pdf_bytes) and any(
        rb"/Encrypt" in o.body for o in objects.values()
    ):
        raise PdfError("encrypted PDFs are not supported")

    pages = _page_objects(pdf_bytes, objects)
    if not pages:
        raise PdfError("no pages found")

    out: list[str] = []
    for page_body in pages:
        content = b""
        for ref in _content_refs(page_body):
            obj = objects.get(ref)
            if obj is None or obj.stream is None:
                continue
            content += _decode_stream(obj) + b"\n"
        out.append(_text_from_content(content))
    return out


def _scan_objects(raw: bytes) -> dict[tuple[int, int], _Object]:
    """Sequential scan for `N G obj` blocks, skipping over stream payloads.

    Stream bytes are sliced by /Length so binary payloads can never be
    mistaken for object delimiters.
    """
    objects: dict[tuple[int, int], _Object] = {}
    pos = 0
    while True:
        m = _OBJ_RE.search(raw, pos)
        if m is None:
            break
        key = (int(m.group(1)), int(m.group(2)))
        body_start = m.end()
        body_end, stream = _object_extent(raw, body_start)
        objects[key] = _Object(raw[body_start:body_end], stream)
        pos = body_end
    # Resolve indirect /Length references now that every object is known.
    for obj in objects.values():
        if obj.stream is None:
            continue
        lm = _LENGTH_REF_RE.search(obj.body)
        if lm is not None:
            target = objects.get((int(lm.group(1)), int(lm.group(2))))
            if target is not None:
                digits = re.search(rb"\d+", target.body)
                if digits:
                    obj.stream = obj.stream[: int(digits.group(0))]
    return objects


def _object_extent(raw: bytes, start: int) -> tuple[int, bytes | None]:
    """Return (end offset, stream payload or None) for the object at start."""
    endobj = raw.find(b"endobj", start)
    stream_kw = re.compile(rb"stream\r?\n").search(raw, start)
    if stream_kw is None or (endobj != -1 and endobj < stream_kw.start()):
        return (endobj + 6 if endobj != -1 else len(raw)), None
    head = raw[start:stream_kw.start()]
    direct = _LENGTH_RE.search(head)
    data_start = stream_kw.end()
    if direct is not None and not _LENGTH_REF_RE.search(head):
        data_end = data_start + int(direct.group(1))
    else:
        # Indirect or missing /Length: fall back to the endstream marker.
        data_end = raw.find(b"endstream", data_start)
        if data_end == -1:
            data_end = len(raw)
    tail = raw.find(b"endobj", data_end)
    return (tail + 6 if tail != -1 else len(raw)), raw[data_start:data_end]


def _page_objects(raw: bytes, objects: dict[tuple[int, int], _Object]) -> list[bytes]:
    """Page object bodies in page-tree order, falling back to scan order."""
    root = None
    for tm in re.finditer(rb"trailer(.{0,2048}?)>>", raw, re.S):
        rm = re.search(rb"/Root\s+(\d+)\s+(\d+)\s+R", tm.group(1))
        if rm:
            root = (int(rm.group(1)), int(rm.group(2)))
    if root is None:
        for key, obj in objects.items():
            if re.search(rb"/Type\s*/Catalog\b", obj.body):
                root = key
                break
    pages: list[bytes] = []
    if root is not None and root in objects:
        pm = re.search(rb"/Pages\s+(\d+)\s+(\d+)\s+R", objects[root].body)
        if pm:
            _walk_pages((int(pm.group(1)), int(pm.group(2))), objects, pages, set())
    if not pages:
        for obj in objects.values():
            if re.search(rb"/Type\s*/Page\b", obj.body):
                pages.append(obj.body)
    return pages


def _walk_pages(key, objects, out: list[bytes], seen: set) -> None:
    if key in seen or key not in objects:
        return
    seen.add(key)
    body = objects[key].body
    if re.search(rb"/Type\s*/Page\b", body):
        out.append(body)
        return
    km = re.search(rb"/Kids\s*\[([^\]]*)\]", body)
    if km is None:
        return
    for rm in _REF_RE.finditer(km.group(1)):
        _walk_pages((int(rm.group(1)), int(rm.group(2))), objects, out, seen)


def _content_refs(page_body: bytes) -> list[tuple[int, int]]:
    cm = re.search(rb"/Contents\s*(\[[^\]]*\]|\d+\s+\d+\s+R)", page_body)
    if cm is None:
        return []
    return [(int(m.group(1)), int(m.group(2))) for m in _REF_RE.finditer(cm.group(1))]


def _decode_stream(obj: _Object) -> bytes:
    data = obj.stream or b""
    fm = _FILTER_RE.search(obj.body)
    if fm is None:
        return data
    filters = [n.group(1) for n in _NAME_RE.finditer(fm.group(1))]
    for name in filters:
        try:
            if name == b"FlateDecode":
                data = zlib.decompress(data)
            elif name == b"ASCII85Decode":
                compact = bytes(b for b in data if b not in b" \t\r\n\x00")
                data = base64.a85decode(compact, adobe=True)
            else:
                return b""  # unsupported filter (images etc.): no text
        except (zlib.error, ValueError) as exc:
            raise PdfError(f"corrupt {name.decode()} stream") from exc
    return data


_STRING_ESCAPES = {
    ord("n"): b"\n",
    ord("r"): b"\r",
    ord("t"): b"\t",
    ord("b"): b"\b",
    ord("f"): b"\f",
    ord("("): b"(",
    ord(")"): b")",
    ord("\\"): b"\\",
}


def _text_from_content(content: bytes) -> str:
    """Run the text operators of a content stream.

    Line structure follows the text cursor: Td/TD/T*/Tm/'/" that change
    the vertical position start a new output line. Horizontal-only moves
    concatenate onto the current line.
    """
    lines: list[list[str]] = [[]]
    operands: list[object] = []
    last_y: float | None = None
    i, n = 0, len(content)

    def show(value: str) -> None:
        if value:
            lines[-1].append(value)

    def newline() -> None:
        if lines[-1]:
            lines.append([])

    def move_to(y: float | None) -> None:
        nonlocal last_y
        if y is None or last_y is None or y != last_y:
            newline()
        last_y = y

    while i < n:
        ch = content[i:i + 1]
        if ch in b" \t\r\n\x00":
            i += 1
        elif ch == b"(":
            text, i = _literal_string(content, i)
            operands.append(text)
        elif ch == b"<" and content[i:i + 2] != b"<<":
            text, i = _hex_string(content, i)
            operands.append(text)
        elif ch == b"<":
            i = _skip_dict(content, i)
            operands.clear()
        elif ch == b"[":
            items, i = _array(content, i)
            operands.append(items)
        elif ch == b"/":
            m = re.compile(rb"/[^\s/<>\[\]()]*").match(content, i)
            operands.append(None)
            i = m.end()
        elif ch in b"+-.0123456789":
            m = re.compile(rb"[+-]?\d*\.?\d+").match(content, i)
            if m is None:
                i += 1
                continue
            operands.append(float(m.group(0)))
            i = m.end()
        else:
            m = re.compile(rb"[A-Za-z'\"*]+").match(content, i)
            if m is None:
                i += 1
                continue
            op = m.group(0)
            i = m.end()
            if op == b"Tj":
                if operands and isinstance(operands[-1], str):
                    show(operands[-1])
            elif op == b"TJ":
                if operands and isinstance(operands[-1], list):
                    show("".join(x for x in operands[-1] if isinstance(x, str)))
            elif op in (b"'", b'"'):
                move_to(None)
                if operands and isinstance(operands[-1], str):
                    show(operands[-1])
            elif op == b"Td" or op == b"TD":
                if len(operands) >= 2 and isinstance(operands[-1], float):
                    ty = operands[-1]
                    if ty != 0:
                        move_to(None)
                else:
                    move_to(None)
            elif op == b"Tm":
                y = operands[-1] if operands and isinstance(operands[-1], float) else None
                move_to(y)
            elif op == b"T*":
                move_to(None)
            operands.clear()
    return "\n".join("".join(parts) for parts in lines if parts)


def _literal_string(content: bytes, i: int) -> tuple[str, int]:
    out = bytearray()
    depth = 1
    i += 1
    n = len(content)
    while i < n and depth:
        b = content[i]
        if b == 0x5C and i + 1 < n:  # backslash
            nxt = content[i + 1]
            if nxt in _STRING_ESCAPES:
                out += _STRING_ESCAPES[nxt]
                i += 2
            elif 0x30 <= nxt <= 0x37:  # octal \ooo
                j = i + 1
                digits = b""
                while j < n and len(digits) < 3 and 0x30 <= content[j] <= 0x37:
                    digits += content[j:j + 1]
                    j += 1
                out.append(int(digits, 8) & 0xFF)
                i = j
            elif nxt in (0x0A, 0x0D):  # line continuation
                i += 2
                if nxt == 0x0D and i < n and content[i] == 0x0A:
                    i += 1
            else:
                out.append(nxt)
                i += 2
        elif b == 0x28:  # (
            depth += 1
            out.append(b)
            i += 1
        elif b == 0x29:  # )
            depth -= 1
            if depth:
                out.append(b)
            i += 1
        else:
            out.append(b)
            i += 1
    return out.decode("cp1252", errors="replace"), i


def _hex_string(content: bytes, i: int) -> tuple[str, int]:
    end = content.find(b">", i)
    if end == -1:
        end = len(content)
    digits = re.sub(rb"[^0-9A-Fa-f]", b"", content[i + 1:end])
    if len(digits) % 2:
        digits += b"0"
    return bytes.fromhex(digits.decode()).decode("cp1252", errors="replace"), end + 1


def _skip_dict(content: bytes, i: int) -> int:
    depth = 0
    n = len(content)
    while i < n:
        if content[i:i + 2] == b"<<":
            depth += 1
            i += 2
        elif content[i:i + 2] == b">>":
            depth -= 1
            i += 2
            if depth == 0:
                return i
        elif content[i:i + 1] == b"(":
            _, i = _literal_string(content, i)
        else:
            i += 1
    return i


def _array(content: bytes, i: int) -> tuple[list, int]:
    items: list = []
    i += 1
    n = len(content)
    while i < n:
        ch = content[i:i + 1]
        if ch == b"]":
            return items, i + 1
        if ch in b" \t\r\n":
            i += 1
        elif ch == b"(":
            text, i = _literal_string(content, i)
            items.append(text)
        elif ch == b"<" and content[i:i + 2] != b"<<":
            text, i = _hex_string(content, i)
            items.append(text)
        else:
            m = re.compile(rb"[+-]?\d*\.?\d+").match(content, i)
            if m is not None:
                items.append(float(m.group(0)))
                i = m.end()
            else:
                i += 1
    return items, i
