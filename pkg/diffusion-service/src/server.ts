import { createApp } from "./app.js";

const port = Number(process.env.PORT ?? 8081);
const modelId = process.env.MODEL_ID ?? "stable-diffusion-v1-5";
const device = process.env.DEVICE ?? "cpu";

const app = createApp({ modelId, device });
app.listen(port, () => {
  console.log(`diffusion service listening on :${port}`);
  console.log(`model=${modelId} device=${device}`);
});
