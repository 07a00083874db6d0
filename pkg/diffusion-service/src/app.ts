import express from "express";
import type { Request, Response } from "express";
import { ZodSchema } from "zod";

import { b64ToBytes, b64ToF32, bytesToB64, f32ToB64 } from "./codec.js";
import { inpaint, invertEmbedding, sdsGrad } from "./backend.js";
import {
  inpaintRequestSchema,
  invertRequestSchema,
  sdsRequestSchema,
} from "./schema.js";

export interface AppConfig {
  modelId: string;
  device: string;
}

const U64_MAX = (1n << 64n) - 1n;

// JSON.parse turns big integers into rounded doubles, so uint64 seeds must be
// pulled from the raw body text. Every digit-run after a "seed" key is tried;
// the one that rounds to the parsed number is the real field (the others are
// lookalikes inside string values).
function liftSeed(raw: string, body: Record<string, unknown>): void {
  const parsed = body["seed"];
  if (
    typeof parsed !== "number" ||
    !Number.isFinite(parsed) ||
    !Number.isInteger(parsed) ||
    parsed < 0
  ) {
    return; // schema reports the type error
  }
  for (const match of raw.matchAll(/"seed"\s*:\s*(\d+)/g)) {
    const candidate = BigInt(match[1]);
    if (candidate <= U64_MAX && Number(candidate) === parsed) {
      body["seed"] = candidate;
      return;
    }
  }
}

function sendError(res: Response, status: number, message: string): void {
  res.status(status).json({ error: message });
}

function parseBody(
  req: Request,
  res: Response,
): Record<string, unknown> | null {
  if (!Buffer.isBuffer(req.body)) {
    sendError(res, 400, "request body must be application/json");
    return null;
  }
  const raw = req.body.toString("utf8");
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch {
    sendError(res, 400, "request body is not valid JSON");
    return null;
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    sendError(res, 400, "request body must be a JSON object");
    return null;
  }
  const body = parsed as Record<string, unknown>;
  if ("seed" in body) liftSeed(raw, body);
  return body;
}

function validate<T>(
  schema: ZodSchema<T>,
  body: unknown,
  res: Response,
): T | null {
  const result = schema.safeParse(body);
  if (!result.success) {
    const issue = result.error.issues[0];
    const path = issue.path.join(".");
    sendError(res, 400, path ? `${path}: ${issue.message}` : issue.message);
    return null;
  }
  return result.data;
}

export function createApp(config: AppConfig): express.Express {
  const app = express();
  app.use(express.raw({ type: "application/json", limit: "64mb" }));

  const tokens = new Map<string, Float32Array>();

  app.get("/healthz", (_req, res) => {
    res.type("text/plain").send("ok");
  });

  app.post("/sds_grad", (req, res) => {
    const body = parseBody(req, res);
    if (!body) return;
    const parsed = validate(sdsRequestSchema, body, res);
    if (!parsed) return;

    let image: Float32Array;
    try {
      image = b64ToF32(parsed.image_b64, parsed.height * parsed.width * 3);
    } catch (err) {
      sendError(res, 400, `image_b64: ${(err as Error).message}`);
      return;
    }
    try {
      const grad = sdsGrad({
        prompt: parsed.prompt,
        guidanceScale: parsed.guidance_scale,
        height: parsed.height,
        width: parsed.width,
        seed: parsed.seed,
        tMin: parsed.t_min,
        tMax: parsed.t_max,
        image,
      });
      res.json({ grad_b64: f32ToB64(grad), loss: null });
    } catch (err) {
      sendError(res, 500, `gradient failed: ${(err as Error).message}`);
    }
  });

  app.post("/inpaint", (req, res) => {
    const body = parseBody(req, res);
    if (!body) return;
    const parsed = validate(inpaintRequestSchema, body, res);
    if (!parsed) return;

    let image: Uint8Array;
    let mask: Uint8Array;
    try {
      image = b64ToBytes(parsed.image_b64, parsed.height * parsed.width * 3);
    } catch (err) {
      sendError(res, 400, `image_b64: ${(err as Error).message}`);
      return;
    }
    try {
      mask = b64ToBytes(parsed.mask_b64, parsed.height * parsed.width);
    } catch (err) {
      sendError(res, 400, `mask_b64: ${(err as Error).message}`);
      return;
    }
    if (!mask.some((value) => value >= 128)) {
      sendError(res, 400, "empty mask");
      return;
    }

    // A learned token mentioned in the prompt steers the repaint color.
    let tokenEmbedding: Float32Array | undefined;
    for (const [tokenId, embedding] of tokens) {
      if (parsed.prompt.includes(tokenId)) {
        tokenEmbedding = embedding;
        break;
      }
    }

    try {
      const painted = inpaint({
        height: parsed.height,
        width: parsed.width,
        image,
        mask,
        prompt: parsed.prompt,
        seed: parsed.seed,
        steps: parsed.steps,
        tokenEmbedding,
      });
      res.json({ image_b64: bytesToB64(painted) });
    } catch (err) {
      sendError(res, 500, `inpaint failed: ${(err as Error).message}`);
    }
  });

  app.post("/invert", (req, res) => {
    const body = parseBody(req, res);
    if (!body) return;
    const parsed = validate(invertRequestSchema, body, res);
    if (!parsed) return;

    if (tokens.has(parsed.token_id)) {
      sendError(res, 409, `token '${parsed.token_id}' already registered`);
      return;
    }
    const images: Uint8Array[] = [];
    for (let i = 0; i < parsed.subject_images.length; i++) {
      try {
        images.push(b64ToBytes(parsed.subject_images[i]));
      } catch (err) {
        sendError(res, 400, `subject_images.${i}: ${(err as Error).message}`);
        return;
      }
    }
    try {
      const embedding = invertEmbedding(images, config.modelId);
      tokens.set(parsed.token_id, embedding);
      res.json({
        token_id: parsed.token_id,
        image_count: images.length,
        embedding_b64: f32ToB64(embedding),
      });
    } catch (err) {
      sendError(res, 500, `inversion failed: ${(err as Error).message}`);
    }
  });

  return app;
}
