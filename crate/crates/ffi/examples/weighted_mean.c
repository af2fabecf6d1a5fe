/* Build: cc weighted_mean.c -I../include -L../../../target/release -lmtfl_ffi */
#include <stdio.h>

#include "mtfl.h"

int main(void) {
    const double updates[] = {1.0, 2.0, 5.0, 6.0};
    const size_t counts[] = {1, 3};
    double out[2];

    MtflStatus s = mtfl_weighted_mean(updates, counts, 2, 2, out);
    if (s != MTFL_STATUS_OK) {
        fprintf(stderr, "mtfl_weighted_mean: %s\n", mtfl_last_error());
        return 1;
    }
    printf("mtfl %s: %g %g\n", mtfl_version(), out[0], out[1]);

    MtflConfig *cfg = NULL;
    s = mtfl_config_from_file("/nonexistent.toml", &cfg);
    printf("missing config -> status %d (%s)\n", (int)s, mtfl_last_error());
    return s == MTFL_STATUS_IO ? 0 : 1;
}
