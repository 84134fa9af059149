"""Knowledge-base store: articles, title-prefixed sections, image ownership.

Input arrives pre-sectioned as line-delimited JSON (one article per line);
an optional image manifest adds image-to-article associations. A built
KnowledgeBase is immutable and safe for concurrent readers.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import DataError

# Separator between title, heading and body in the text handed to the
# reranker. Kept fixed so stored section text is reproducible.
SECTION_SEPARATOR = " ## "


@dataclass(frozen=True)
class SectionRecord:
    section_id: str  # "<url>#<ordinal>", ordinal 0-based and dense
    heading: str
    body: str
    prefixed_text: str

    @staticmethod
    def build(url: str, title: str, ordinal: int, heading: str, body: str) -> "SectionRecord":
        return SectionRecord(
            section_id=f"{url}#{ordinal}",
            heading=heading,
            body=body,
            prefixed_text=title + SECTION_SEPARATOR + heading + SECTION_SEPARATOR + body,
        )


@dataclass(frozen=True)
class ArticleEntry:
    url: str
    title: str
    sections: tuple[SectionRecord, ...]
    image_ids: tuple[str, ...]


@dataclass(frozen=True)
class KnowledgeBase:
    entries: dict[str, ArticleEntry]  # url -> entry, insertion-ordered
    image_index: dict[str, str]  # image_id -> url

    @property
    def stats(self) -> dict[str, int]:
        return {
            "entries": len(self.entries),
            "sections": sum(len(e.sections) for e in self.entries.values()),
            "images": len(self.image_index),
        }

    def entry(self, url: str) -> ArticleEntry:
        try:
            return self.entries[url]
        except KeyError:
            raise DataError(f"unknown url {url!r}") from None

    def entry_of_image(self, image_id: str) -> ArticleEntry:
        try:
            return self.entries[self.image_index[image_id]]
        except KeyError:
            raise DataError(f"unknown image id {image_id!r}") from None

    def sections_of(self, urls: Iterable[str]) -> list[SectionRecord]:
        """All sections of the given entries, entry order then section
        order, no deduplication."""
        out: list[SectionRecord] = []
        for url in urls:
            out.extend(self.entry(url).sections)
        return out

    def section(self, section_id: str) -> SectionRecord:
        url, sep, ordinal = section_id.rpartition("#")
        if not sep:
            raise DataError(f"malformed section id {section_id!r}")
        entry = self.entry(url)
        try:
            return entry.sections[int(ordinal)]
        except (ValueError, IndexError):
            raise DataError(f"unknown section {section_id!r}") from None


@dataclass
class IngestIssue:
    line: int
    message: str


@dataclass
class IngestReport:
    """What ingest skipped or flagged; empty lists mean a clean load."""

    skipped: list[IngestIssue] = field(default_factory=list)
    zero_section_urls: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "skipped": [{"line": i.line, "message": i.message} for i in self.skipped],
            "zero_section_urls": list(self.zero_section_urls),
        }


def _nfc(s: str) -> str:
    return unicodedata.normalize("NFC", s)


def _require_str(obj: dict, key: str, allow_empty: bool = False) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise ValueError(f"field {key!r} must be a string")
    if not allow_empty and not value:
        raise ValueError(f"field {key!r} must be nonempty")
    return _nfc(value)


def _parse_article(obj: dict) -> ArticleEntry:
    url = _require_str(obj, "url")
    title = _require_str(obj, "title")
    raw_sections = obj.get("sections")
    if not isinstance(raw_sections, list):
        raise ValueError("field 'sections' must be a list")
    sections = []
    for ordinal, sec in enumerate(raw_sections):
        if not isinstance(sec, dict):
            raise ValueError(f"section {ordinal} must be an object")
        heading = _require_str(sec, "heading", allow_empty=True)
        body = _require_str(sec, "body")
        sections.append(SectionRecord.build(url, title, ordinal, heading, body))
    raw_images = obj.get("image_ids", [])
    if not isinstance(raw_images, list) or any(not isinstance(i, str) or not i for i in raw_images):
        raise ValueError("field 'image_ids' must be a list of nonempty strings")
    image_ids = [_nfc(i) for i in raw_images]
    if len(set(image_ids)) != len(image_ids):
        raise ValueError("duplicate image id within entry")
    return ArticleEntry(url=url, title=title, sections=tuple(sections), image_ids=tuple(image_ids))


def ingest(
    kb_file: str | Path | IO[str],
    image_manifest: str | Path | IO[str] | None = None,
    strict: bool = False,
) -> tuple[KnowledgeBase, IngestReport]:
    """Load and validate the knowledge base.

    Malformed records are skipped and reported (strict mode raises
    instead). Duplicate urls and dangling manifest image ids always
    raise: they violate invariants that per-line skipping cannot repair.
    """
    report = IngestReport()
    entries: dict[str, ArticleEntry] = {}
    first_line_of: dict[str, int] = {}
    owner_of: dict[str, str] = {}

    def handle(lineno: int, message: str) -> None:
        if strict:
            raise DataError(f"line {lineno}: {message}")
        report.skipped.append(IngestIssue(lineno, message))

    with _maybe_open(kb_file) as stream:
        for lineno, raw in _robust_lines(stream, handle):
            try:
                entry = _parse_article(raw)
            except ValueError as exc:
                handle(lineno, str(exc))
                continue
            if entry.url in entries:
                raise DataError(
                    f"duplicate url {entry.url!r} (lines {first_line_of[entry.url]} and {lineno})"
                )
            for image_id in entry.image_ids:
                if image_id in owner_of:
                    raise DataError(
                        f"image id {image_id!r} claimed by both "
                        f"{owner_of[image_id]!r} and {entry.url!r}"
                    )
                owner_of[image_id] = entry.url
            entries[entry.url] = entry
            first_line_of[entry.url] = lineno
            if not entry.sections:
                report.zero_section_urls.append(entry.url)

    if image_manifest is not None:
        with _maybe_open(image_manifest) as stream:
            for lineno, raw in _robust_lines(stream, handle):
                try:
                    image_id = _require_str(raw, "image_id")
                    url = _require_str(raw, "url")
                except ValueError as exc:
                    handle(lineno, str(exc))
                    continue
                if url not in entries:
                    raise DataError(f"dangling image id {image_id!r}: no entry {url!r}")
                if image_id in owner_of:
                    if owner_of[image_id] != url:
                        raise DataError(
                            f"image id {image_id!r} claimed by both "
                            f"{owner_of[image_id]!r} and {url!r}"
                        )
                    continue
                owner_of[image_id] = url
                entry = entries[url]
                entries[url] = ArticleEntry(
                    url=entry.url,
                    title=entry.title,
                    sections=entry.sections,
                    image_ids=entry.image_ids + (image_id,),
                )

    return KnowledgeBase(entries=entries, image_index=owner_of), report


def _robust_lines(stream: IO[str], handle) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            handle(lineno, f"invalid JSON: {exc.msg}")
            continue
        if not isinstance(obj, dict):
            handle(lineno, "record must be a JSON object")
            continue
        yield lineno, obj


class _maybe_open:
    """Accept a path or an already-open text stream."""

    def __init__(self, source):
        self.source = source
        self.opened = None

    def __enter__(self):
        if hasattr(self.source, "read"):
            return self.source
        self.opened = open(self.source, "r", encoding="utf-8")
        return self.opened

    def __exit__(self, *exc):
        if self.opened is not None:
            self.opened.close()
        return False


def export(kb: KnowledgeBase, destination: str | Path | IO[str]) -> None:
    """Write the KB back out as line-delimited article records.

    Image associations are embedded per entry, so the output re-ingests
    without a manifest to a field-by-field identical KB.
    """
    def write(stream: IO[str]) -> None:
        for entry in kb.entries.values():
            record = {
                "url": entry.url,
                "title": entry.title,
                "sections": [{"heading": s.heading, "body": s.body} for s in entry.sections],
                "image_ids": list(entry.image_ids),
            }
            stream.write(json.dumps(record, ensure_ascii=False) + "\n")

    if hasattr(destination, "write"):
        write(destination)
    else:
        with open(destination, "w", encoding="utf-8") as stream:
            write(stream)
