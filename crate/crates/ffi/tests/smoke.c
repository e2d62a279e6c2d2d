#include <stdio.h>
#include <string.h>
#include "simulstream.h"

int main(void) {
    const char *cfg = "[models]\ntranslator = \"copy\"\n[policy]\nname = \"waitk\"\nK = 2\n";
    SimulEngine *engine = NULL;
    if (simulstream_engine_new(cfg, &engine) != SIMUL_STATUS_OK) {
        fprintf(stderr, "engine: %s\n", simulstream_last_error());
        return 1;
    }
    char *json = NULL;
    if (simulstream_engine_simulate(engine, "x y z", 0, &json) != SIMUL_STATUS_OK) {
        fprintf(stderr, "simulate: %s\n", simulstream_last_error());
        return 1;
    }
    printf("%s\n", json);
    simulstream_string_free(json);
    simulstream_engine_free(engine);

    size_t delays[] = {2, 3, 3};
    double laal = 0.0;
    if (simulstream_laal(delays, 3, 3, 3, &laal) != SIMUL_STATUS_OK) {
        return 1;
    }
    printf("laal=%.3f\n", laal);

    SimulEngine *bad = NULL;
    if (simulstream_engine_new("[policy]\nname = \"nope\"\n", &bad) != SIMUL_STATUS_CONFIG || bad != NULL) {
        return 1;
    }
    return 0;
}
