// Submit-form model and job-script generation. Validation mirrors the
// server's grammar limits so that every script the form emits parses on
// the server.

export interface JobForm {
  app: "pi" | "slab";
  cpus: number;
  walltimeS: number;
  samples: number;
  seed: string; // unsigned 64-bit, kept as string to avoid precision loss
  sigmaT?: number;
  sigmaA?: number;
  thickness?: number;
}

export const LIMITS = {
  maxWalltimeS: 86400,
  maxSeed: 18446744073709551615n,
};

export function validateForm(form: JobForm): string[] {
  const errors: string[] = [];
  if (!Number.isInteger(form.cpus) || form.cpus < 1) {
    errors.push("cpus must be a positive integer");
  }
  if (
    !Number.isInteger(form.walltimeS) ||
    form.walltimeS < 1 ||
    form.walltimeS > LIMITS.maxWalltimeS
  ) {
    errors.push(`walltime must be 1..${LIMITS.maxWalltimeS} seconds`);
  }
  if (!Number.isInteger(form.samples) || form.samples < 1) {
    errors.push("samples must be a positive integer");
  } else if (Number.isInteger(form.cpus) && form.samples < form.cpus) {
    errors.push("samples must be at least cpus (one task per cpu)");
  }
  let seed: bigint | null = null;
  try {
    seed = BigInt(form.seed.trim());
  } catch {
    errors.push("seed must be an integer");
  }
  if (seed !== null && (seed < 0n || seed > LIMITS.maxSeed)) {
    errors.push("seed must be an unsigned 64-bit integer");
  }
  if (form.app === "slab") {
    const { sigmaT, sigmaA, thickness } = form;
    if (sigmaT === undefined || !(sigmaT > 0)) {
      errors.push("sigma_t must be > 0");
    }
    if (
      sigmaA === undefined ||
      !(sigmaA > 0) ||
      (sigmaT !== undefined && sigmaA > sigmaT)
    ) {
      errors.push("sigma_a must be in (0, sigma_t]");
    }
    if (thickness === undefined || !(thickness >= 0)) {
      errors.push("thickness must be >= 0");
    }
  }
  return errors;
}

export function buildJobScript(form: JobForm): string {
  const errors = validateForm(form);
  if (errors.length > 0) {
    throw new Error(errors.join("; "));
  }
  const lines = [
    `#JOB cpus=${form.cpus}`,
    `#JOB walltime_s=${form.walltimeS}`,
    `#JOB app=${form.app}`,
    `#JOB samples=${form.samples}`,
    `#JOB seed=${BigInt(form.seed.trim())}`,
  ];
  if (form.app === "slab") {
    lines.push(`#JOB sigma_t=${formatNumber(form.sigmaT!)}`);
    lines.push(`#JOB sigma_a=${formatNumber(form.sigmaA!)}`);
    lines.push(`#JOB thickness=${formatNumber(form.thickness!)}`);
  }
  return lines.join("\n") + "\n";
}

// Plain decimal (never exponent notation) keeps the server's float parser
// and humans equally happy.
function formatNumber(x: number): string {
  if (Number.isInteger(x)) return `${x}.0`;
  const text = String(x);
  if (!text.includes("e") && !text.includes("E")) return text;
  return x.toFixed(20).replace(/0+$/, "").replace(/\.$/, ".0");
}
