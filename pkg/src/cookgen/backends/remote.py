"""HTTP/JSON clients for remote model services.

The wire protocol (documented in docs/wire-protocol.md) is deliberately
minimal: one POST route per backend kind, images as base64-encoded PNG.
"""

from __future__ import annotations

import base64
import io
import logging
import threading

import numpy as np
import requests
from PIL import Image

from ..errors import BackendTimeout, BackendUnavailable, MalformedBackendReply
from .base import BackendDescriptor, ChatTurn, DetectionResult, clamp_bbox

logger = logging.getLogger(__name__)


def encode_image(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    with Image.open(io.BytesIO(raw)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def encode_mask(mask: np.ndarray) -> str:
    raster = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(raster, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_mask(data: str) -> np.ndarray:
    raw = base64.b64decode(data)
    with Image.open(io.BytesIO(raw)) as img:
        return np.asarray(img.convert("L")) > 127


class _RemoteClient:
    route = ""

    def __init__(self, descriptor: BackendDescriptor):
        self.descriptor = descriptor
        self._session = requests.Session()
        # callers may fan out across worker threads; cap in-flight requests
        self._slots = threading.BoundedSemaphore(descriptor.max_concurrency)

    def _post(self, payload: dict) -> dict:
        url = self.descriptor.endpoint.rstrip("/") + self.route
        payload = {"model": self.descriptor.model_tag, **payload}
        with self._slots:
            try:
                resp = self._session.post(url, json=payload, timeout=self.descriptor.timeout)
            except requests.Timeout as exc:
                raise BackendTimeout(f"{url} timed out after {self.descriptor.timeout}s") from exc
            except requests.RequestException as exc:
                raise BackendUnavailable(f"{url}: {exc}") from exc
        if resp.status_code != 200:
            raise BackendUnavailable(f"{url} returned HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedBackendReply(f"{url} returned non-JSON body") from exc


class RemoteVlm(_RemoteClient):
    route = "/v1/chat"

    def chat(self, messages: list[ChatTurn]) -> str:
        wire = []
        for turn in messages:
            entry = {"role": turn.role, "text": turn.text}
            if turn.image is not None:
                entry["image_b64"] = encode_image(turn.image)
            wire.append(entry)
        reply = self._post({"messages": wire})
        if "reply" not in reply:
            raise MalformedBackendReply("chat reply missing 'reply' field")
        return str(reply["reply"])


class RemoteDetector(_RemoteClient):
    route = "/v1/detect"

    def detect_segment(self, frame, labels, return_masks=False):
        reply = self._post(
            {
                "image_b64": encode_image(frame),
                "labels": list(labels),
                "return_masks": bool(return_masks),
            }
        )
        results = []
        for det in reply.get("detections", []):
            bbox, changed = clamp_bbox(tuple(det["bbox"]), frame.shape)
            if changed:
                logger.warning("remote bbox %s clamped to %s", det["bbox"], bbox)
            mask = decode_mask(det["mask_b64"]) if det.get("mask_b64") else None
            score = float(det["score"])
            if not (0.0 <= score <= 1.0):
                logger.warning("remote score %s clamped into [0, 1]", score)
                score = min(max(score, 0.0), 1.0)
            results.append(
                DetectionResult(
                    label=str(det["label"]),
                    score=score,
                    bbox=bbox,
                    pixel_mask=mask,
                )
            )
        return results


class RemoteInpainter(_RemoteClient):
    route = "/v1/inpaint"

    @property
    def native_resolution(self):
        return self.descriptor.native_resolution

    def inpaint(self, frame, mask, prompt, seed):
        reply = self._post(
            {
                "image_b64": encode_image(frame),
                "mask_b64": encode_mask(mask),
                "prompt": prompt,
                "seed": int(seed),
            }
        )
        if "image_b64" not in reply:
            raise MalformedBackendReply("inpaint reply missing 'image_b64' field")
        return decode_image(reply["image_b64"])


class RemoteEmbedder(_RemoteClient):
    route = "/v1/embed"

    def embed(self, image):
        reply = self._post({"image_b64": encode_image(image)})
        if "embedding" not in reply:
            raise MalformedBackendReply("embed reply missing 'embedding' field")
        vec = np.asarray(reply["embedding"], dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise MalformedBackendReply("embed reply has zero norm")
        return vec / norm
