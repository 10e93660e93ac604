/** CLI entry: `node dist/main.js --gateway HOST:PORT --http PORT`. */

import { startConsole } from "./server";

function parseArgs(argv: string[]): { gatewayHost: string; gatewayPort: number; httpPort: number } {
  let gateway = process.env.EDGESIM_BIND ?? "127.0.0.1:7466";
  let httpPort = 8080;
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--gateway" && argv[i + 1]) gateway = argv[++i];
    else if (argv[i] === "--http" && argv[i + 1]) httpPort = parseInt(argv[++i], 10);
  }
  const colon = gateway.lastIndexOf(":");
  if (colon < 0) {
    throw new Error(`--gateway expects HOST:PORT, got ${gateway}`);
  }
  return {
    gatewayHost: gateway.slice(0, colon),
    gatewayPort: parseInt(gateway.slice(colon + 1), 10),
    httpPort,
  };
}

async function main(): Promise<void> {
  const options = parseArgs(process.argv.slice(2));
  const console_ = await startConsole(options);
  console.log(
    `console connected to ${options.gatewayHost}:${options.gatewayPort}, ` +
      `dashboard at http://127.0.0.1:${console_.httpPort}/`
  );
  console_.client.on("close", () => {
    console.log("gateway connection closed");
  });
}

main().catch((err) => {
  console.error(String(err));
  process.exit(1);
});
