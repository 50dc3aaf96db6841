"""Pure-Python strapdown kernel; same arithmetic order as ``_kernels.pyx``.

State layout (16 doubles): position[0:3], velocity[3:6], quaternion
w,x,y,z[6:10], accel bias[10:13], gyro bias[13:16].
"""

import math

G = 9.80665


def propagate(state, accel, gyro, dt, zupt, out_pos, out_quat, start, stop):
    """Integrate segments ``start..stop-1`` in place; return first bad index or -1."""
    px, py, pz, vx, vy, vz, qw, qx, qy, qz, bax, bay, baz, bgx, bgy, bgz = (float(s) for s in state)
    bad = -1
    for k in range(start, stop):
        h = float(dt[k])
        if zupt[k]:
            vx = vy = vz = 0.0
        else:
            ax = float(accel[k, 0]) - bax
            ay = float(accel[k, 1]) - bay
            az = float(accel[k, 2]) - baz
            wx = float(gyro[k, 0]) - bgx
            wy = float(gyro[k, 1]) - bgy
            wz = float(gyro[k, 2]) - bgz
            if not (math.isfinite(ax) and math.isfinite(ay) and math.isfinite(az)
                    and math.isfinite(wx) and math.isfinite(wy) and math.isfinite(wz)):
                bad = k
                break
            # world-frame acceleration with the pre-step attitude
            r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
            r01 = 2.0 * (qx * qy - qw * qz)
            r02 = 2.0 * (qx * qz + qw * qy)
            r10 = 2.0 * (qx * qy + qw * qz)
            r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
            r12 = 2.0 * (qy * qz - qw * qx)
            r20 = 2.0 * (qx * qz - qw * qy)
            r21 = 2.0 * (qy * qz + qw * qx)
            r22 = 1.0 - 2.0 * (qx * qx + qy * qy)
            awx = r00 * ax + r01 * ay + r02 * az
            awy = r10 * ax + r11 * ay + r12 * az
            awz = r20 * ax + r21 * ay + r22 * az - G
            px = px + vx * h + 0.5 * awx * h * h
            py = py + vy * h + 0.5 * awy * h * h
            pz = pz + vz * h + 0.5 * awz * h * h
            vx = vx + awx * h
            vy = vy + awy * h
            vz = vz + awz * h
            angle = math.sqrt(wx * wx + wy * wy + wz * wz) * h
            if angle < 1e-12:
                dw = 1.0
                s = 0.5 * h
            else:
                dw = math.cos(0.5 * angle)
                s = math.sin(0.5 * angle) * h / angle
            dx = s * wx
            dy = s * wy
            dz = s * wz
            nw = qw * dw - qx * dx - qy * dy - qz * dz
            nx = qw * dx + qx * dw + qy * dz - qz * dy
            ny = qw * dy - qx * dz + qy * dw + qz * dx
            nz = qw * dz + qx * dy - qy * dx + qz * dw
            n = math.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
            qw = nw / n
            qx = nx / n
            qy = ny / n
            qz = nz / n
        out_pos[k, 0] = px
        out_pos[k, 1] = py
        out_pos[k, 2] = pz
        out_quat[k, 0] = qw
        out_quat[k, 1] = qx
        out_quat[k, 2] = qy
        out_quat[k, 3] = qz
    state[0:10] = (px, py, pz, vx, vy, vz, qw, qx, qy, qz)
    return bad
