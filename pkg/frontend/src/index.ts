export * from './protocol.js';
export { FrameBuffer } from './ring-buffer.js';
export { RateLimitedSender } from './debounce.js';
export {
  UiSessionModel,
  type BlendedInterval,
  type CommandEcho,
  type ConnectionState,
  type DialState,
  type EchoStatus,
} from './session-model.js';
export {
  PROPAGATE_LATENT,
  REPLAY_ENCODED,
  StudioClient,
  type StudioClientOptions,
  type Transport,
} from './client.js';
export { TcpTransport } from './tcp-transport.js';
