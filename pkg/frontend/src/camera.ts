/** Orbit-style camera helper. The synthetic scenes are built for a camera at
 * the origin looking down +z, with content a few units away, so the orbit
 * pivots around a point on that axis. At azimuth 0 / elevation 0 /
 * radius == pivot distance the orbit camera coincides with the training
 * camera, which keeps "reset" and "untouched" views identical. */

import type { CameraSpec } from "./types.js";

export const ORBIT_PIVOT: [number, number, number] = [0, 0, 3];
export const ORBIT_DEFAULTS = { azimuth: 0, elevation: 0, radius: 3, fov: 60 };

export function orbitCamera(
  azimuthDeg: number,
  elevationDeg: number,
  radius: number,
  fov: number,
): CameraSpec {
  const az = (azimuthDeg * Math.PI) / 180;
  const el = (elevationDeg * Math.PI) / 180;
  const [cx, cy, cz] = ORBIT_PIVOT;
  return {
    eye: [
      cx + radius * Math.sin(az) * Math.cos(el),
      cy + radius * Math.sin(el),
      cz - radius * Math.cos(az) * Math.cos(el),
    ],
    target: ORBIT_PIVOT,
    up: [0, 1, 0],
    fov,
  };
}

/** True when the orbit parameters are exactly the defaults, in which case the
 * client omits the camera and lets the server use the training camera. */
export function isDefaultOrbit(
  azimuthDeg: number,
  elevationDeg: number,
  radius: number,
  fov: number,
): boolean {
  return (
    azimuthDeg === ORBIT_DEFAULTS.azimuth &&
    elevationDeg === ORBIT_DEFAULTS.elevation &&
    radius === ORBIT_DEFAULTS.radius &&
    fov === ORBIT_DEFAULTS.fov
  );
}
