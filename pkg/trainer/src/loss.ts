/**
 * The DPO objective on log-probability pairs.
 *
 * For one preference pair the loss is
 *
 *   -log sigmoid(beta * ((polC - refC) - (polR - refR)))
 *
 * with the reference model frozen. The batch loss is the plain mean.
 */

export interface LogprobPair {
  chosen: number;
  rejected: number;
}

function assertFinite(value: number, name: string): void {
  if (!Number.isFinite(value)) {
    throw new RangeError(`${name} must be finite, got ${value}`);
  }
}

// log(1 + e^x) without overflow on either tail
function softplus(x: number): number {
  if (x > 30) return x;
  if (x < -30) return Math.exp(x);
  return Math.log1p(Math.exp(x));
}

/** Implicit reward margin beta * (delta_chosen - delta_rejected). */
export function rewardMargin(
  policy: LogprobPair,
  ref: LogprobPair,
  beta: number
): number {
  assertFinite(policy.chosen, "policy.chosen");
  assertFinite(policy.rejected, "policy.rejected");
  assertFinite(ref.chosen, "ref.chosen");
  assertFinite(ref.rejected, "ref.rejected");
  assertFinite(beta, "beta");
  if (beta <= 0) {
    throw new RangeError(`beta must be positive, got ${beta}`);
  }
  return beta * (policy.chosen - ref.chosen - (policy.rejected - ref.rejected));
}

export function dpoLoss(
  policy: LogprobPair,
  ref: LogprobPair,
  beta: number
): number {
  return softplus(-rewardMargin(policy, ref, beta));
}

export function dpoBatchLoss(
  policy: LogprobPair[],
  ref: LogprobPair[],
  beta: number
): number {
  if (policy.length !== ref.length) {
    throw new RangeError(
      `policy and reference batches differ: ${policy.length} vs ${ref.length}`
    );
  }
  if (policy.length === 0) {
    throw new RangeError("batch must be non-empty");
  }
  let total = 0;
  for (let i = 0; i < policy.length; i++) {
    total += dpoLoss(policy[i], ref[i], beta);
  }
  return total / policy.length;
}

/**
 * d(loss)/d(margin) for one pair: -sigmoid(-margin_scaled) where
 * margin_scaled = beta * margin difference. Used by the training loop to
 * backpropagate into the policy log-probabilities.
 */
export function dLossDMargin(marginScaled: number): number {
  return -1 / (1 + Math.exp(marginScaled));
}
