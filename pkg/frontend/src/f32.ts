/** Single-precision rounding: every intermediate the engine stores goes
 * through fround so results match a float32 implementation bit for bit. */
export const f32 = Math.fround;
