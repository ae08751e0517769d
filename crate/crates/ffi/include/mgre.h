#ifndef MGRE_H
#define MGRE_H

/* Generated by cbindgen from mgre-ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MGRE_OK 0

#define MGRE_ERR_ARGUMENT 1

#define MGRE_ERR_DIMS 2

#define MGRE_ERR_IO 3

#define MGRE_ERR_FORMAT 4

#define MGRE_ERR_NUMERIC 5

#define MGRE_ERR_PROVENANCE 6

#define MGRE_ERR_NULL_POINTER 7

#define MGRE_ERR_PANIC 8

/**
 * Sampling mask handle.
 */
typedef struct MgreMask MgreMask;

/**
 * Trained cascade model handle.
 */
typedef struct MgreModel MgreModel;

/**
 * Complex 3D volume handle.
 */
typedef struct MgreVolume MgreVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap` bytes). Returns the full message length in bytes,
 * excluding the NUL; call with `buf == NULL` to query the length.
 */
size_t mgre_last_error(char *buf, size_t cap);

/**
 * Crate version as a static NUL-terminated string.
 */
const char *mgre_version(void);

/**
 * Read a .cvol file. `kspace` selects the k-space domain tag (nonzero) or
 * image domain (zero).
 */
int mgre_volume_read(const char *path, int kspace, struct MgreVolume **out);

int mgre_volume_write(const char *path, const struct MgreVolume *vol);

void mgre_volume_free(struct MgreVolume *vol);

int mgre_volume_dims(const struct MgreVolume *vol, size_t *nx, size_t *ny, size_t *nz);

/**
 * Copy the volume into `data` as interleaved (re, im) little-endian f64
 * pairs, x fastest. `cap` is the capacity of `data` in f64 elements and
 * must be at least `2 * nx * ny * nz`.
 */
int mgre_volume_copy(const struct MgreVolume *vol, double *data, size_t cap);

int mgre_fft(const struct MgreVolume *vol, struct MgreVolume **out);

int mgre_ifft(const struct MgreVolume *vol, struct MgreVolume **out);

int mgre_mask_generate(size_t ny,
                       size_t nz,
                       double target_accel,
                       size_t calib_y,
                       size_t calib_z,
                       uint64_t seed,
                       struct MgreMask **out);

int mgre_mask_read(const char *path, struct MgreMask **out);

int mgre_mask_write(const char *path, const struct MgreMask *mask);

void mgre_mask_free(struct MgreMask *mask);

/**
 * Achieved acceleration factor (plane size / sampled count).
 */
int mgre_mask_acceleration(const struct MgreMask *mask, double *out);

/**
 * Zero every k-space bin outside the mask's sampled (y, z) lines.
 */
int mgre_apply_mask(const struct MgreVolume *kspace,
                    const struct MgreMask *mask,
                    struct MgreVolume **out);

int mgre_model_load(const char *path, struct MgreModel **out);

void mgre_model_free(struct MgreModel *model);

/**
 * Zero-filled reconstruction: inverse FFT of the measured k-space.
 */
int mgre_recon_zerofill(const struct MgreVolume *kspace, struct MgreVolume **out);

/**
 * Cascade reconstruction of one masked k-space volume.
 */
int mgre_recon_cascade(const struct MgreModel *model,
                       const struct MgreVolume *kspace,
                       const struct MgreMask *mask,
                       struct MgreVolume **out);

/**
 * PSNR (dB) between the magnitudes of two complex volumes; +inf when equal.
 */
int mgre_psnr(const struct MgreVolume *reference, const struct MgreVolume *test, double *out);

/**
 * Mean SSIM over axial slices of the magnitudes of two complex volumes.
 */
int mgre_ssim(const struct MgreVolume *reference, const struct MgreVolume *test, double *out);

/**
 * Root-mean-square error between magnitudes of two complex volumes.
 */
int mgre_rmse(const struct MgreVolume *reference, const struct MgreVolume *test, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGRE_H */
