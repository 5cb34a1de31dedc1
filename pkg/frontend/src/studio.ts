/**
 * Terminal operator console for the playback service.
 *
 *   npm run studio -- --host 127.0.0.1 --port 7860 --joints 0,1,2
 *
 * Live strip charts (unicode sparklines) for the selected joints, one dial
 * line per latent channel, a command echo log, and a prompt:
 *
 *   motions | play NAME [mode] | stop | trans NAME [dur] | scale X
 *   mode replay-encoded|propagate-latent | state | quit
 */

import readline from 'node:readline';

import { StudioClient } from './client.js';
import { TcpTransport } from './tcp-transport.js';

const BARS = ' ▁▂▃▄▅▆▇█';

function sparkline(values: number[], width: number): string {
  const tail = values.slice(-width);
  if (tail.length === 0) return '';
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of tail) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  const span = hi - lo;
  return tail
    .map((v) => {
      const unit = span > 0 ? (v - lo) / span : 0.5;
      return BARS[Math.min(BARS.length - 1, Math.round(unit * (BARS.length - 1)))];
    })
    .join('');
}

function parseArgs(argv: string[]): { host: string; port: number; joints: number[] } {
  const out = { host: '127.0.0.1', port: 7860, joints: [0, 1, 2] };
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === '--host') out.host = argv[++i] ?? out.host;
    else if (argv[i] === '--port') out.port = Number(argv[++i]);
    else if (argv[i] === '--joints') {
      out.joints = (argv[++i] ?? '').split(',').map(Number).filter(Number.isFinite);
    }
  }
  return out;
}

function render(client: StudioClient, joints: number[]): string {
  const m = client.model;
  const lines: string[] = [];
  const st = m.lastState;
  lines.push(
    `[${m.connection}] motion=${st?.motion ?? '-'} mode=${st?.mode ?? '-'} ` +
      `scale=${st?.freq_scale ?? '-'} dropped=${m.droppedTotal}`,
  );
  const frame = m.buffer.newest();
  if (frame !== undefined) {
    lines.push(`t=${frame.t.toFixed(2)}s buffer=${m.buffer.size} frames`);
    for (const j of joints) {
      const series = m.chartSeries(j);
      const cur = frame.q[j];
      lines.push(
        `q[${j}] ${sparkline(series.y, 64)} ${cur !== undefined ? cur.toFixed(3) : '?'}`,
      );
    }
    m.dials().forEach((d, i) => {
      const deg = ((d.angleRad * 180) / Math.PI).toFixed(0).padStart(4);
      lines.push(
        `ch${i} phi=${deg}° f=${d.freq.toFixed(2)}Hz ` +
          `a=${d.amp.toFixed(3)} b=${d.offset.toFixed(3)}`,
      );
    });
  } else {
    lines.push('no frames yet');
  }
  for (const echo of m.echoes.slice(-4)) {
    lines.push(`#${echo.id} ${echo.command.type} -> ${echo.status}`);
  }
  for (const notice of m.notices.slice(-2)) lines.push(`! ${notice}`);
  return lines.join('\n');
}

function dispatch(client: StudioClient, input: string): boolean {
  const [verb, ...rest] = input.trim().split(/\s+/);
  switch (verb) {
    case '':
      return true;
    case 'motions':
      client.requestMotions();
      return true;
    case 'play':
      if (rest[0] !== undefined) client.play(rest[0], rest[1]);
      return true;
    case 'stop':
      client.stop();
      return true;
    case 'trans':
      if (rest[0] !== undefined) {
        client.transitionTo(rest[0], rest[1] !== undefined ? Number(rest[1]) : 0.5);
      }
      return true;
    case 'scale':
      client.setFreqScale(Number(rest[0]));
      return true;
    case 'mode':
      if (rest[0] !== undefined) client.setMode(rest[0]);
      return true;
    case 'state':
      client.requestState();
      return true;
    case 'quit':
    case 'exit':
      return false;
    default:
      console.log(`unknown command '${verb}'`);
      return true;
  }
}

function main(): void {
  const { host, port, joints } = parseArgs(process.argv.slice(2));
  const client = new StudioClient(() => new TcpTransport(host, port));
  client.connect();

  const rl = readline.createInterface({ input: process.stdin, output: process.stdout });
  rl.setPrompt('studio> ');

  const timer = setInterval(() => {
    // Repaint above the prompt; a dropped repaint is fine, commands are not.
    readline.cursorTo(process.stdout, 0, 0);
    readline.clearScreenDown(process.stdout);
    console.log(render(client, joints));
    rl.prompt(true);
  }, 250);

  rl.on('line', (input) => {
    if (!dispatch(client, input)) rl.close();
    else rl.prompt();
  });
  rl.on('close', () => {
    clearInterval(timer);
    client.close();
    process.exit(0);
  });
}

main();
