"""Model backends: captioner, editors, verifier, refiner and encoders."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from ..core import BackendError
from .base import (SATISFIED, BackendProfile, BackendSuite, Caption, ImageHandle, Kind,
                   Reflection, Role, VerifierLogits, augment_instruction)

__all__ = [
    "SATISFIED", "BackendProfile", "BackendSuite", "Caption", "ImageHandle", "Kind",
    "Reflection", "Role", "VerifierLogits", "augment_instruction", "load_backends",
    "parse_profiles",
]

_SUITE_SLOT = {
    Role.CAPTIONER: "captioner",
    Role.EDITOR_TEXT: "text_editor",
    Role.EDITOR_IMAGE: "image_editor",
    Role.VERIFIER: "verifier",
    Role.REFINER: "refiner",
    Role.ENCODER_TEXT: "text_encoder",
    Role.ENCODER_IMAGE: "image_encoder",
}


def parse_profiles(doc: dict[str, Any], base_dir: Path | None = None) -> list[BackendProfile]:
    """Expand the ``profiles`` list of a backends document. ``"role": "ALL"``
    applies one profile to every role; manifest paths resolve against ``base_dir``."""
    out: list[BackendProfile] = []
    for entry in doc.get("profiles", []):
        entry = dict(entry)
        try:
            kind = Kind(str(entry.pop("kind")).upper())
            role_name = str(entry.pop("role")).upper()
        except (KeyError, ValueError) as exc:
            raise BackendError("SCHEMA_ERROR", "profiles", f"bad profile entry: {exc}") from None
        manifest = entry.pop("manifest", None)
        if manifest is not None and base_dir is not None and not Path(manifest).is_absolute():
            manifest = str(base_dir / manifest)
        roles = list(Role) if role_name == "ALL" else [Role(role_name)]
        for role in roles:
            out.append(BackendProfile(role=role, kind=kind, manifest=manifest, **entry))
    return out


def load_backends(path: str | Path | None = None, doc: dict[str, Any] | None = None,
                  dim: int | None = None, parallelism: int = 4, transport=None) -> BackendSuite:
    """Build a :class:`BackendSuite` from a backends JSON document."""
    from .http import (ChatClient, HttpCaptioner, HttpImageEditor, HttpImageEncoder,
                       HttpRefiner, HttpTextEditor, HttpTextEncoder, HttpVerifier)
    from .lookup import FileLookupEncoder

    base_dir = None
    if doc is None:
        if path is None:
            raise BackendError("SCHEMA_ERROR", "backends", "no backends file given")
        base_dir = Path(path).resolve().parent
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    prompt_dir = doc.get("prompt_dir")
    artifact_dir = Path(doc.get("artifact_dir", "artifacts"))
    if base_dir is not None and not artifact_dir.is_absolute():
        artifact_dir = base_dir / artifact_dir

    suite = BackendSuite(dim=dim, parallelism=parallelism)
    oracle_worlds: dict[str, Any] = {}
    lookups: dict[str, FileLookupEncoder] = {}
    for prof in parse_profiles(doc, base_dir):
        if prof.kind is Kind.ORACLE:
            from ..synth.oracle import OracleSuite

            world = oracle_worlds.get(prof.manifest)
            if world is None:
                world = oracle_worlds[prof.manifest] = OracleSuite.from_manifest(prof.manifest)
            impl = world
        elif prof.kind is Kind.FILE_LOOKUP:
            impl = lookups.get(prof.manifest)
            if impl is None:
                impl = lookups[prof.manifest] = FileLookupEncoder(prof.manifest)
        else:
            client = ChatClient(prof, transport=transport)
            impl = {
                Role.CAPTIONER: lambda: HttpCaptioner(client, prompt_dir),
                Role.EDITOR_TEXT: lambda: HttpTextEditor(client, prompt_dir),
                Role.EDITOR_IMAGE: lambda: HttpImageEditor(client, artifact_dir, prompt_dir),
                Role.VERIFIER: lambda: HttpVerifier(client, prompt_dir),
                Role.REFINER: lambda: HttpRefiner(client, prompt_dir),
                Role.ENCODER_TEXT: lambda: HttpTextEncoder(client),
                Role.ENCODER_IMAGE: lambda: HttpImageEncoder(client),
            }[prof.role]()
        setattr(suite, _SUITE_SLOT[prof.role], impl)
    return suite
