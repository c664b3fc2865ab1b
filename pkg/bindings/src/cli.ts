import { spawnSync } from 'node:child_process';

export class CliError extends Error {
  constructor(
    message: string,
    public readonly exitCode: number | null,
    public readonly stderr: string,
  ) {
    super(message);
    this.name = 'CliError';
  }
}

/** Resolve the CLI command; COGFOREST_CLI overrides (space-separated). */
export function cliCommand(): string[] {
  const override = process.env.COGFOREST_CLI;
  if (override && override.trim().length > 0) {
    return override.trim().split(/\s+/);
  }
  return ['python3', '-m', 'cogforest'];
}

/** Run one CLI invocation, returning stdout; non-zero exit raises CliError. */
export function runCli(args: string[]): string {
  const [cmd, ...pre] = cliCommand();
  const res = spawnSync(cmd, [...pre, ...args], {
    encoding: 'utf8',
    maxBuffer: 64 * 1024 * 1024,
  });
  if (res.error) {
    throw new CliError(`failed to launch ${cmd}: ${res.error.message}`, null, '');
  }
  if (res.status !== 0) {
    throw new CliError(
      `cogforest ${args[0]} exited with ${res.status}: ${res.stderr.trim()}`,
      res.status,
      res.stderr,
    );
  }
  return res.stdout;
}
