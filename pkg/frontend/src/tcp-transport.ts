import net from 'node:net';

import type { Transport } from './client.js';

/**
 * Newline-delimited JSON over a plain TCP socket (node runtime). A browser
 * build would substitute a WebSocket bridge here; everything above the
 * Transport interface is runtime-agnostic.
 */
export class TcpTransport implements Transport {
  private readonly socket: net.Socket;
  private buffer = '';
  private messageCb: ((line: string) => void) | null = null;
  private closeCb: (() => void) | null = null;

  constructor(host: string, port: number) {
    this.socket = net.createConnection({ host, port });
    this.socket.setEncoding('utf-8');
    this.socket.on('data', (chunk: string) => {
      this.buffer += chunk;
      let nl: number;
      while ((nl = this.buffer.indexOf('\n')) >= 0) {
        const line = this.buffer.slice(0, nl);
        this.buffer = this.buffer.slice(nl + 1);
        if (line.trim() !== '') this.messageCb?.(line);
      }
    });
    const closeOnce = () => {
      const cb = this.closeCb;
      this.closeCb = null;
      cb?.();
    };
    this.socket.on('close', closeOnce);
    this.socket.on('error', () => this.socket.destroy());
  }

  send(line: string): void {
    if (this.socket.destroyed) throw new Error('socket closed');
    this.socket.write(line + '\n');
  }

  onMessage(cb: (line: string) => void): void {
    this.messageCb = cb;
  }

  onClose(cb: () => void): void {
    this.closeCb = cb;
  }

  close(): void {
    this.closeCb = null;
    this.socket.destroy();
  }
}
