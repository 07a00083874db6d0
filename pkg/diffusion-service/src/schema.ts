import { z } from "zod";

const U64_MAX = (1n << 64n) - 1n;

// Seeds arrive as bigint: the app lifts them out of the raw body before
// validation because JSON.parse rounds integers above 2^53.
const seedSchema = z
  .bigint({ invalid_type_error: "seed must be an unsigned 64-bit integer" })
  .refine((s) => s >= 0n && s <= U64_MAX, {
    message: "seed must fit in 64 bits",
  });

const dimension = z.number().int().min(1).max(4096);

export const sdsRequestSchema = z
  .object({
    prompt: z.string().min(1),
    guidance_scale: z.number().finite(),
    height: dimension,
    width: dimension,
    channels: z.literal(3),
    layout: z.literal("HWC"),
    dtype: z.literal("f32le"),
    seed: seedSchema,
    t_min: z.number(),
    t_max: z.number(),
    image_b64: z.string().min(1),
  })
  .strict()
  .refine((r) => r.t_min > 0 && r.t_max < 1 && r.t_min < r.t_max, {
    message: "timestep range must satisfy 0 < t_min < t_max < 1",
  });

export type SdsRequest = z.infer<typeof sdsRequestSchema>;

export const inpaintRequestSchema = z
  .object({
    height: dimension,
    width: dimension,
    image_b64: z.string().min(1),
    mask_b64: z.string().min(1),
    prompt: z.string().min(1),
    seed: seedSchema,
    steps: z.number().int().min(1).max(250),
  })
  .strict();

export type InpaintRequest = z.infer<typeof inpaintRequestSchema>;

export const invertRequestSchema = z
  .object({
    token_id: z.string().min(1),
    subject_images: z
      .array(z.string().min(1))
      .min(3, "textual inversion needs 3-5 subject images")
      .max(5, "textual inversion needs 3-5 subject images"),
  })
  .strict();

export type InvertRequest = z.infer<typeof invertRequestSchema>;
