"""Regenerates the recorded sidecar exchanges used by the client contract test.

Each file holds one exchange: method, path, request body, status, response
body, and an optional "expect" block with values the client must decode.
"""
import base64
import json
import math
import struct
from pathlib import Path

HERE = Path(__file__).parent
V = 8
MASK = 7


def log_softmax(logits):
    m = max(logits)
    z = m + math.log(sum(math.exp(x - m) for x in logits))
    return [x - z for x in logits]


def f32(x):
    return struct.unpack("<f", struct.pack("<f", x))[0]


def full_payload(lp):
    raw = b"".join(struct.pack("<f", x) for x in lp)
    return {"mode": "full", "log_probs_f32le_b64": base64.b64encode(raw).decode()}


def write(name, method, path, request, status, response, expect=None):
    doc = {"method": method, "path": path, "request": request, "status": status, "response": response}
    if expect is not None:
        doc["expect"] = expect
    (HERE / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")


write("health", "GET", "/v1/health", None, 200, {
    "version": "v1", "status": "ok", "vocab_size": V, "mask_token_id": MASK,
    "mlm_model": "fixture-mlm", "embedding_model": "fixture-embed",
})

# Full-vocabulary answer for context [1, MASK, 3], position 1.
lp = log_softmax([0.5, 2.0, -1.0, 0.0, 1.0, 0.3, -2.0, -0.5])
write("mlm_full", "POST", "/v1/mlm",
      {"version": "v1", "top_k": 0, "queries": [{"ids": [1, MASK, 3], "positions": [1]}]},
      200,
      {"version": "v1", "vocab_size": V, "results": [[{"position": 1, **full_payload(lp)}]]},
      {"log_probs": [f32(x) for x in lp]})

# Top-3 answer for context [MASK, 2, 2], position 0; remaining mass spread evenly.
lp = log_softmax([3.0, 0.1, 2.0, 0.2, 1.5, 0.0, 0.3, 0.1])
top = sorted(range(V), key=lambda i: -lp[i])[:3]
residual = math.log(sum(math.exp(lp[i]) for i in range(V) if i not in top))
spread = residual - math.log(V - 3)
expected = [f32(lp[i]) if i in top else spread for i in range(V)]
write("mlm_topk", "POST", "/v1/mlm",
      {"version": "v1", "top_k": 3, "queries": [{"ids": [MASK, 2, 2], "positions": [0]}]},
      200,
      {"version": "v1", "vocab_size": V, "results": [[{
          "position": 0, "mode": "top_k", "top_ids": top,
          "top_log_probs": [f32(lp[i]) for i in top], "residual_log_mass": residual}]]},
      {"log_probs": expected})

write("mlm_error", "POST", "/v1/mlm",
      {"version": "v1", "top_k": 0, "queries": [{"ids": [9, MASK], "positions": [1]}]},
      400,
      {"version": "v1", "error": {"code": "token_out_of_range", "message": "id 9 >= vocab_size 8"}})

# Sums to 2 instead of 1.
write("mlm_unnormalized", "POST", "/v1/mlm",
      {"version": "v1", "top_k": 0, "queries": [{"ids": [MASK, 0], "positions": [0]}]},
      200,
      {"version": "v1", "vocab_size": V,
       "results": [[{"position": 0, **full_payload([math.log(2.0 / V)] * V)}]]})

write("tokenize", "POST", "/v1/tokenize",
      {"version": "v1", "text": "the cat sat"}, 200,
      {"version": "v1", "ids": [1, 4, 2]})

write("detokenize", "POST", "/v1/detokenize",
      {"version": "v1", "ids": [1, 4, 2]}, 200,
      {"version": "v1", "text": "the cat sat"})

write("embed_sim", "POST", "/v1/embed_sim",
      {"version": "v1", "text_a": "the cat sat", "text_b": "the cat sat down"}, 200,
      {"version": "v1", "similarity": 0.9321})

write("tokenize_wrong_version", "POST", "/v1/tokenize",
      {"version": "v1", "text": "old server"}, 200,
      {"version": "v0", "ids": [1]})
