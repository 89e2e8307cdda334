/* Scans a headerless 8-bit grayscale file: detect MODEL RAW WIDTH HEIGHT */
#include <stdio.h>
#include <stdlib.h>

#include "platehog.h"

int main(int argc, char **argv) {
    if (argc != 5) {
        fprintf(stderr, "usage: %s MODEL RAW WIDTH HEIGHT\n", argv[0]);
        return 1;
    }
    unsigned width = (unsigned)atoi(argv[3]), height = (unsigned)atoi(argv[4]);
    size_t n = (size_t)width * height;
    unsigned char *pixels = malloc(n);
    FILE *f = fopen(argv[2], "rb");
    if (!pixels || !f || fread(pixels, 1, n, f) != n) {
        fprintf(stderr, "cannot read %s\n", argv[2]);
        return 2;
    }
    fclose(f);

    PhModel *model = NULL;
    if (ph_model_load(argv[1], &model) != PH_STATUS_OK) {
        fprintf(stderr, "%s\n", ph_last_error());
        return 2;
    }
    PhDetections *dets = NULL;
    PhStatus st = ph_detect_gray8(model, pixels, width, height, width, NULL, &dets);
    if (st != PH_STATUS_OK) {
        fprintf(stderr, "%s\n", ph_last_error());
        ph_model_free(model);
        return 2;
    }
    printf("x,y,w,h,score,level\n");
    for (size_t i = 0; i < ph_detections_len(dets); i++) {
        PhDetection d;
        ph_detections_get(dets, i, &d);
        printf("%g,%g,%g,%g,%.17g,%u\n", d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.score, d.level);
    }
    ph_detections_free(dets);
    ph_model_free(model);
    free(pixels);
    return 0;
}
