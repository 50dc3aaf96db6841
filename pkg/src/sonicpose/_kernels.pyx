# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled strapdown kernel. Mirrors ``_kernels_py.propagate`` operation for operation."""

from libc.math cimport sqrt, sin, cos, isfinite

cdef double G = 9.80665


def propagate(double[::1] state, const double[:, ::1] accel, const double[:, ::1] gyro,
              const double[::1] dt, const unsigned char[::1] zupt,
              double[:, ::1] out_pos, double[:, ::1] out_quat, Py_ssize_t start, Py_ssize_t stop):
    cdef double px = state[0], py = state[1], pz = state[2]
    cdef double vx = state[3], vy = state[4], vz = state[5]
    cdef double qw = state[6], qx = state[7], qy = state[8], qz = state[9]
    cdef double bax = state[10], bay = state[11], baz = state[12]
    cdef double bgx = state[13], bgy = state[14], bgz = state[15]
    cdef double h, ax, ay, az, wx, wy, wz
    cdef double r00, r01, r02, r10, r11, r12, r20, r21, r22
    cdef double awx, awy, awz, angle, dw, s, dx, dy, dz, nw, nx, ny, nz, n
    cdef Py_ssize_t k
    cdef Py_ssize_t bad = -1
    for k in range(start, stop):
        h = dt[k]
        if zupt[k]:
            vx = 0.0
            vy = 0.0
            vz = 0.0
        else:
            ax = accel[k, 0] - bax
            ay = accel[k, 1] - bay
            az = accel[k, 2] - baz
            wx = gyro[k, 0] - bgx
            wy = gyro[k, 1] - bgy
            wz = gyro[k, 2] - bgz
            if not (isfinite(ax) and isfinite(ay) and isfinite(az)
                    and isfinite(wx) and isfinite(wy) and isfinite(wz)):
                bad = k
                break
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
            angle = sqrt(wx * wx + wy * wy + wz * wz) * h
            if angle < 1e-12:
                dw = 1.0
                s = 0.5 * h
            else:
                dw = cos(0.5 * angle)
                s = sin(0.5 * angle) * h / angle
            dx = s * wx
            dy = s * wy
            dz = s * wz
            nw = qw * dw - qx * dx - qy * dy - qz * dz
            nx = qw * dx + qx * dw + qy * dz - qz * dy
            ny = qw * dy - qx * dz + qy * dw + qz * dx
            nz = qw * dz + qx * dy - qy * dx + qz * dw
            n = sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
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
    state[0] = px
    state[1] = py
    state[2] = pz
    state[3] = vx
    state[4] = vy
    state[5] = vz
    state[6] = qw
    state[7] = qx
    state[8] = qy
    state[9] = qz
    return bad
